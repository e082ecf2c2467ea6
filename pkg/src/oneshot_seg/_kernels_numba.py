"""Loop kernels compiled with numba.

Every function here has a twin with the same signature in ``_kernels_numpy``.
Masks are passed flattened in column-major order; RLE batches are passed as a
concatenated counts array plus an offsets array (``counts[off[i]:off[i+1]]``).
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def rle_encode(flat):
    n = flat.shape[0]
    out = np.empty(n + 1, dtype=np.int64)
    k = 0
    cur = False
    run = 0
    for i in range(n):
        v = flat[i] != 0
        if v != cur:
            out[k] = run
            k += 1
            run = 0
            cur = v
        run += 1
    out[k] = run
    k += 1
    return out[:k].copy()


@njit(**_JIT)
def rle_decode(counts, n):
    out = np.zeros(n, dtype=np.bool_)
    pos = 0
    val = False
    for i in range(counts.shape[0]):
        c = counts[i]
        if val:
            for j in range(pos, pos + c):
                out[j] = True
        pos += c
        val = not val
    return out


@njit(**_JIT)
def intervals_to_counts(starts, ends, total):
    # starts/ends sorted, non-overlapping, half-open; adjacent intervals merge
    out = np.empty(2 * starts.shape[0] + 1, dtype=np.int64)
    k = 0
    pos = 0
    i = 0
    m = starts.shape[0]
    while i < m:
        s = starts[i]
        e = ends[i]
        if e <= s:
            i += 1
            continue
        while i + 1 < m and starts[i + 1] <= e:
            if ends[i + 1] > e:
                e = ends[i + 1]
            i += 1
        out[k] = s - pos
        out[k + 1] = e - s
        k += 2
        pos = e
        i += 1
    if pos < total or k == 0:
        out[k] = total - pos
        k += 1
    return out[:k].copy()


@njit(**_JIT)
def _pair_intersection(counts, a0, a1, b0, b1):
    # walk both run lists in lockstep; zero-length runs only flip the value
    ia = a0
    ib = b0
    va = False
    vb = False
    while ia < a1 and counts[ia] == 0:
        ia += 1
        va = not va
    while ib < b1 and counts[ib] == 0:
        ib += 1
        vb = not vb
    if ia >= a1 or ib >= b1:
        return 0
    ra = counts[ia]
    rb = counts[ib]
    inter = 0
    while True:
        step = ra if ra < rb else rb
        if va and vb:
            inter += step
        ra -= step
        rb -= step
        if ra == 0:
            ia += 1
            va = not va
            while ia < a1 and counts[ia] == 0:
                ia += 1
                va = not va
            if ia >= a1:
                break
            ra = counts[ia]
        if rb == 0:
            ib += 1
            vb = not vb
            while ib < b1 and counts[ib] == 0:
                ib += 1
                vb = not vb
            if ib >= b1:
                break
            rb = counts[ib]
    return inter


@njit(**_JIT)
def rle_intersection_matrix(counts_a, off_a, counts_b, off_b):
    na = off_a.shape[0] - 1
    nb = off_b.shape[0] - 1
    both = np.concatenate((counts_a, counts_b))
    shift = counts_a.shape[0]
    out = np.zeros((na, nb), dtype=np.int64)
    for i in range(na):
        for j in range(nb):
            out[i, j] = _pair_intersection(
                both, off_a[i], off_a[i + 1], off_b[j] + shift, off_b[j + 1] + shift
            )
    return out


@njit(**_JIT)
def polygon_fill(xs, ys, poly_off, r0, c0, h, w):
    """Even-odd fill per polygon, union over polygons, sampled at pixel centres.

    The output window covers rows r0..r0+h-1 and columns c0..c0+w-1.
    """
    out = np.zeros((h, w), dtype=np.bool_)
    cross = np.empty(xs.shape[0], dtype=np.float64)
    for p in range(poly_off.shape[0] - 1):
        p0 = poly_off[p]
        p1 = poly_off[p + 1]
        nv = p1 - p0
        for r in range(h):
            yc = r0 + r + 0.5
            nc = 0
            for v in range(nv):
                xa = xs[p0 + v]
                ya = ys[p0 + v]
                nxt = v + 1 if v + 1 < nv else 0
                xb = xs[p0 + nxt]
                yb = ys[p0 + nxt]
                # half-open rule on y so shared vertices count once
                if (ya <= yc < yb) or (yb <= yc < ya):
                    cross[nc] = xa + (yc - ya) * (xb - xa) / (yb - ya)
                    nc += 1
            if nc < 2:
                continue
            cs = np.sort(cross[:nc])
            for q in range(0, nc - 1, 2):
                xl = cs[q]
                xr = cs[q + 1]
                # centre c0+c+0.5 in [xl, xr)
                lo = int(np.ceil(xl - 0.5)) - c0
                hi = int(np.ceil(xr - 0.5)) - c0
                if lo < 0:
                    lo = 0
                if hi > w:
                    hi = w
                for c in range(lo, hi):
                    out[r, c] = True
    return out


@njit(**_JIT)
def box_iou_matrix(a, b, crowd):
    na = a.shape[0]
    nb = b.shape[0]
    out = np.zeros((na, nb), dtype=np.float64)
    for i in range(na):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(nb):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            if crowd[j]:
                union = area_a
            else:
                union = area_a + (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1]) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


@njit(**_JIT)
def nms(boxes, scores, thr):
    n = boxes.shape[0]
    order = np.argsort(-scores, kind="mergesort")
    suppressed = np.zeros(n, dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    k = 0
    for ii in range(n):
        i = order[ii]
        if suppressed[i]:
            continue
        keep[k] = i
        k += 1
        area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        for jj in range(ii + 1, n):
            j = order[jj]
            if suppressed[j]:
                continue
            iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_j = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
            union = area_i + area_j - inter
            if union > 0.0 and inter / union > thr:
                suppressed[j] = True
    return keep[:k].copy()


@njit(**_JIT)
def greedy_match(ious, gt_ignore, gt_crowd, thresholds):
    """COCO-style greedy matching; gts must be ordered non-ignored first.

    Returns (dt_gt, dt_ignore, gt_hit): matched gt index per (threshold, det)
    or -1, whether the det matched an ignored gt, and per-gt matched flags.
    """
    nt = thresholds.shape[0]
    nd = ious.shape[0]
    ng = ious.shape[1]
    dt_gt = np.full((nt, nd), -1, dtype=np.int64)
    dt_ig = np.zeros((nt, nd), dtype=np.bool_)
    gt_hit = np.zeros((nt, ng), dtype=np.bool_)
    for t in range(nt):
        for d in range(nd):
            best = min(thresholds[t], 1.0 - 1e-10)
            m = -1
            for g in range(ng):
                if gt_hit[t, g] and not gt_crowd[g]:
                    continue
                if m > -1 and not gt_ignore[m] and gt_ignore[g]:
                    break
                if ious[d, g] < best:
                    continue
                best = ious[d, g]
                m = g
            if m == -1:
                continue
            dt_ig[t, d] = gt_ignore[m]
            dt_gt[t, d] = m
            gt_hit[t, m] = True
    return dt_gt, dt_ig, gt_hit


@njit(**_JIT)
def bilinear_sample(x, ys, xs):
    """Sample x (HxWxC) on the grid ys × xs (pixel-index coordinates, clamped)."""
    h, w, c = x.shape
    oh = ys.shape[0]
    ow = xs.shape[0]
    out = np.empty((oh, ow, c), dtype=np.float32)
    for i in range(oh):
        y = min(max(ys[i], 0.0), h - 1.0)
        y0 = int(np.floor(y))
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(ow):
            xx = min(max(xs[j], 0.0), w - 1.0)
            x0 = int(np.floor(xx))
            x1 = min(x0 + 1, w - 1)
            fx = xx - x0
            for ch in range(c):
                top = (1.0 - fx) * x[y0, x0, ch] + fx * x[y0, x1, ch]
                bot = (1.0 - fx) * x[y1, x0, ch] + fx * x[y1, x1, ch]
                out[i, j, ch] = (1.0 - fy) * top + fy * bot
    return out
