"""Vectorised numpy twins of the loop kernels in ``_kernels_numba``."""

import numpy as np


def rle_encode(flat):
    v = np.asarray(flat).astype(bool, copy=False)
    n = v.shape[0]
    if n == 0:
        return np.zeros(1, dtype=np.int64)
    change = np.flatnonzero(v[1:] != v[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    counts = np.diff(bounds).astype(np.int64)
    if v[0]:
        counts = np.concatenate(([0], counts))
    return counts


def rle_decode(counts, n):
    counts = np.asarray(counts, dtype=np.int64)
    values = np.zeros(counts.shape[0], dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts)


def intervals_to_counts(starts, ends, total):
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    keep = ends > starts
    starts, ends = starts[keep], ends[keep]
    if starts.shape[0] == 0:
        return np.array([total], dtype=np.int64)
    # merge touching/overlapping neighbours
    run_end = np.maximum.accumulate(ends)
    new = np.ones(starts.shape[0], dtype=bool)
    new[1:] = starts[1:] > run_end[:-1]
    grp = np.cumsum(new) - 1
    s = starts[new]
    e = np.zeros(s.shape[0], dtype=np.int64)
    np.maximum.at(e, grp, ends)
    prev_end = np.concatenate(([0], e[:-1]))
    out = np.empty(2 * s.shape[0], dtype=np.int64)
    out[0::2] = s - prev_end
    out[1::2] = e - s
    if e[-1] < total:
        out = np.concatenate((out, [total - e[-1]]))
    return out


def _one_intervals(counts):
    counts = np.asarray(counts, dtype=np.int64)
    ends = np.cumsum(counts)
    starts = ends - counts
    return starts[1::2], ends[1::2]


def _pair_intersection(ca, cb):
    sa, ea = _one_intervals(ca)
    sb, eb = _one_intervals(cb)
    if sa.shape[0] == 0 or sb.shape[0] == 0:
        return 0
    pos = np.concatenate((sa, ea, sb, eb))
    da = np.concatenate((np.ones_like(sa), -np.ones_like(ea), np.zeros_like(sb), np.zeros_like(eb)))
    db = np.concatenate((np.zeros_like(sa), np.zeros_like(ea), np.ones_like(sb), -np.ones_like(eb)))
    order = np.argsort(pos, kind="stable")
    pos, da, db = pos[order], da[order], db[order]
    cov_a = np.cumsum(da)[:-1]
    cov_b = np.cumsum(db)[:-1]
    seg = np.diff(pos)
    return int(np.sum(seg[(cov_a > 0) & (cov_b > 0)]))


def rle_intersection_matrix(counts_a, off_a, counts_b, off_b):
    na = off_a.shape[0] - 1
    nb = off_b.shape[0] - 1
    out = np.zeros((na, nb), dtype=np.int64)
    for i in range(na):
        ca = counts_a[off_a[i]:off_a[i + 1]]
        for j in range(nb):
            out[i, j] = _pair_intersection(ca, counts_b[off_b[j]:off_b[j + 1]])
    return out


def polygon_fill(xs, ys, poly_off, r0, c0, h, w):
    out = np.zeros((h, w), dtype=bool)
    yc = r0 + np.arange(h) + 0.5
    centres = c0 + np.arange(w) + 0.5
    for p in range(poly_off.shape[0] - 1):
        px = xs[poly_off[p]:poly_off[p + 1]]
        py = ys[poly_off[p]:poly_off[p + 1]]
        qx = np.roll(px, -1)
        qy = np.roll(py, -1)
        # rows × edges crossing table
        y = yc[:, None]
        hit = ((py <= y) & (y < qy)) | ((qy <= y) & (y < py))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xcross = px + (y - py) * (qx - px) / (qy - py)
        # inside iff an odd number of crossings lie strictly right of the
        # centre; same as the [xl, xr) spans of the loop kernel
        xcross = np.where(hit, xcross, -np.inf)
        inside = (xcross[:, None, :] > centres[None, :, None]).sum(axis=2) % 2 == 1
        out |= inside
    return out


def box_iou_matrix(a, b, crowd):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = np.where(np.asarray(crowd, dtype=bool)[None, :], area_a[:, None],
                     area_a[:, None] + area_b[None, :] - inter)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where((union > 0) & (inter > 0), inter / union, 0.0)
    return out


def nms(boxes, scores, thr):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0])
        ih = np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        union = areas[i] + areas[rest] - inter
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ovr = np.where(union > 0, inter / union, 0.0)
        order = rest[ovr <= thr]
    return np.asarray(keep, dtype=np.int64)


def greedy_match(ious, gt_ignore, gt_crowd, thresholds):
    ious = np.asarray(ious, dtype=np.float64)
    gt_ignore = np.asarray(gt_ignore, dtype=bool)
    gt_crowd = np.asarray(gt_crowd, dtype=bool)
    nt, (nd, ng) = len(thresholds), ious.shape
    dt_gt = np.full((nt, nd), -1, dtype=np.int64)
    dt_ig = np.zeros((nt, nd), dtype=bool)
    gt_hit = np.zeros((nt, ng), dtype=bool)
    idx = np.arange(ng)
    for t, thr in enumerate(thresholds):
        floor = min(thr, 1.0 - 1e-10)
        for d in range(nd):
            free = ~gt_hit[t] | gt_crowd
            ok = free & (ious[d] >= floor)
            if not ok.any():
                continue
            pool = ok & ~gt_ignore
            if not pool.any():
                pool = ok
            # highest IoU, ties resolved towards the later gt
            cand = idx[pool]
            vals = ious[d, cand]
            m = cand[len(vals) - 1 - np.argmax(vals[::-1])]
            dt_ig[t, d] = gt_ignore[m]
            dt_gt[t, d] = m
            gt_hit[t, m] = True
    return dt_gt, dt_ig, gt_hit


def conv2d(x, k, b, stride, pad):
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    h, w, c = x.shape
    kh, kw, _, co = k.shape
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.empty((oh * ow, co))
    out[:] = np.asarray(b, dtype=np.float64)
    # one matmul per kernel tap keeps memory at a single shifted view
    for di in range(kh):
        for dj in range(kw):
            tap = x[di:di + stride * (oh - 1) + 1:stride, dj:dj + stride * (ow - 1) + 1:stride]
            out += tap.reshape(-1, c) @ k[di, dj]
    return out.reshape(oh, ow, co).astype(np.float32)


def bilinear_sample(x, ys, xs):
    h, w, _ = x.shape
    y = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1.0)
    xx = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1.0)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(xx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[:, None, None]
    fx = (xx - x0)[None, :, None]
    xf = np.asarray(x, dtype=np.float64)
    top = (1.0 - fx) * xf[y0][:, x0] + fx * xf[y0][:, x1]
    bot = (1.0 - fx) * xf[y1][:, x0] + fx * xf[y1][:, x1]
    return ((1.0 - fy) * top + fy * bot).astype(np.float32)
