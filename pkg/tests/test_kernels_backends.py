"""Both kernel backends against loop oracles and against each other."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oneshot_seg import _kernels_numpy

from oracles import (
    box_iou_py,
    conv2d_naive,
    nms_brute,
    polygon_mask_brute,
    rle_counts_brute,
    rle_decode_brute,
)

masks = hnp.arrays(np.bool_, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12))


@settings(max_examples=150, deadline=None)
@given(m=masks)
def test_rle_encode_matches_brute(kern, m):
    counts = kern.rle_encode(np.ascontiguousarray(m.ravel(order="F")))
    assert counts.tolist() == rle_counts_brute(m)
    flat = kern.rle_decode(counts, m.size)
    assert np.array_equal(flat.reshape(m.shape[1], m.shape[0]).T, m)
    assert np.array_equal(rle_decode_brute(counts, *m.shape), m)


def test_rle_empty_input(kern):
    assert kern.rle_encode(np.zeros(0, dtype=bool)).tolist() == [0]


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_intervals_to_counts(kern, data):
    total = data.draw(st.integers(1, 60))
    flags = data.draw(hnp.arrays(np.bool_, total))
    # split every run of ones into arbitrary touching pieces
    starts, ends = [], []
    i = 0
    while i < total:
        if flags[i]:
            j = i
            while j < total and flags[j]:
                j += 1
            cut = data.draw(st.integers(i, j))
            starts += [i, cut]
            ends += [cut, j]
            i = j
        else:
            i += 1
    counts = kern.intervals_to_counts(np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64), total)
    assert counts.tolist() == rle_counts_brute(flags[:, None])


@settings(max_examples=60, deadline=None)
@given(a=masks, seed=st.integers(0, 2**31))
def test_rle_intersection_matrix(kern, a, seed):
    rng = np.random.default_rng(seed)
    others = [rng.random(a.shape) < p for p in (0.0, 0.3, 0.7, 1.0)]
    def stack(ms):
        cs = [kern.rle_encode(np.ascontiguousarray(m.ravel(order="F"))) for m in ms]
        off = np.concatenate(([0], np.cumsum([c.shape[0] for c in cs]))).astype(np.int64)
        return np.concatenate(cs), off
    ca, oa = stack([a, ~a])
    cb, ob = stack(others)
    got = kern.rle_intersection_matrix(ca, oa, cb, ob)
    exp = np.array([[int((x & y).sum()) for y in others] for x in (a, ~a)])
    assert np.array_equal(got, exp)


def test_intersection_tolerates_zero_runs(kern):
    a = np.array([0, 3, 0, 2, 5], dtype=np.int64)  # ones on [0, 5)
    b = np.array([2, 0, 0, 4, 4], dtype=np.int64)  # ones on [2, 6)
    got = kern.rle_intersection_matrix(a, np.array([0, 5]), b, np.array([0, 5]))
    assert got[0, 0] == 3


polys = st.lists(
    st.tuples(st.floats(-3, 15, allow_nan=False), st.floats(-3, 15, allow_nan=False)), min_size=3, max_size=7
)


@settings(max_examples=150, deadline=None)
@given(ps=st.lists(polys, min_size=1, max_size=3))
def test_polygon_fill_matches_point_test(kern, ps):
    flat = [[v for pt in p for v in pt] for p in ps]
    xs = np.concatenate([np.array(f[0::2]) for f in flat])
    ys = np.concatenate([np.array(f[1::2]) for f in flat])
    off = np.concatenate(([0], np.cumsum([len(f) // 2 for f in flat]))).astype(np.int64)
    got = kern.polygon_fill(xs, ys, off, 0, 0, 12, 12)
    assert np.array_equal(got, polygon_mask_brute(flat, 12, 12))


def test_polygon_fill_pixel_centre_edges(kern):
    # square covering [1, 3) exactly: centres 1.5 and 2.5 inside, 3.5 out
    sq = np.array([1.0, 3.0, 3.0, 1.0]), np.array([1.0, 1.0, 3.0, 3.0])
    m = kern.polygon_fill(sq[0], sq[1], np.array([0, 4]), 0, 0, 5, 5)
    exp = np.zeros((5, 5), dtype=bool)
    exp[1:3, 1:3] = True
    assert np.array_equal(m, exp)
    # window offset
    w = kern.polygon_fill(sq[0], sq[1], np.array([0, 4]), 1, 1, 2, 2)
    assert w.all()


boxes = hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.just(4)),
                   elements=st.floats(0, 50, allow_nan=False)).map(
    lambda b: np.concatenate([np.minimum(b[:, :2], b[:, 2:]), np.maximum(b[:, :2], b[:, 2:])], axis=1))


@settings(max_examples=100, deadline=None)
@given(a=boxes, b=boxes, seed=st.integers(0, 1000))
def test_box_iou_matrix(kern, a, b, seed):
    crowd = np.random.default_rng(seed).random(b.shape[0]) < 0.3
    got = kern.box_iou_matrix(a, b, crowd)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            assert got[i, j] == pytest.approx(box_iou_py(a[i], b[j], crowd[j]), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(b=boxes, seed=st.integers(0, 1000), thr=st.floats(0.1, 0.9))
def test_nms(kern, b, seed, thr):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.random(b.shape[0]), 1)  # ties on purpose
    got = kern.nms(b, scores, thr).tolist()
    assert got == nms_brute(b, scores, thr)


def _greedy_ref(ious, ig, crowd, thr):
    nd, ng = ious.shape
    taken = [False] * ng
    res = []
    for d in range(nd):
        best, m = min(thr, 1 - 1e-10), -1
        for g in range(ng):
            if taken[g] and not crowd[g]:
                continue
            if m > -1 and not ig[m] and ig[g]:
                break
            if ious[d, g] < best:
                continue
            best, m = ious[d, g], g
        if m > -1:
            taken[m] = True
        res.append(m)
    return res


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 10**6), nd=st.integers(0, 8), ng=st.integers(0, 6))
def test_greedy_match(kern, seed, nd, ng):
    rng = np.random.default_rng(seed)
    ious = np.round(rng.random((nd, ng)), 1)
    crowd = rng.random(ng) < 0.3
    ig = crowd | (rng.random(ng) < 0.2)
    order = np.argsort(ig, kind="stable")
    ious, ig, crowd = ious[:, order], ig[order], crowd[order]
    thr = np.array([0.5, 0.7])
    dt_gt, dt_ig, gt_hit = kern.greedy_match(np.ascontiguousarray(ious), ig, crowd, thr)
    for t, th in enumerate(thr):
        ref = _greedy_ref(ious, ig, crowd, th)
        assert dt_gt[t].tolist() == ref
        assert dt_ig[t].tolist() == [bool(ig[m]) if m >= 0 else False for m in ref]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.sampled_from([1, 3, 5]), stride=st.sampled_from([1, 2]))
def test_conv2d_kernel(seed, k, stride):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((int(rng.integers(k, 8)), int(rng.integers(k, 8)), 3)).astype(np.float32)
    w = rng.standard_normal((k, k, 3, 4)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    pad = k // 2
    got = _kernels_numpy.conv2d(x, w, b, stride, pad)
    assert np.allclose(got, conv2d_naive(x, w, b, stride, pad), atol=1e-5)


def test_backends_agree_on_bilinear():
    from oneshot_seg import _kernels_numpy
    from oneshot_seg._backend import HAVE_NUMBA

    if not HAVE_NUMBA:
        pytest.skip("numba unavailable")
    from oneshot_seg import _kernels_numba

    rng = np.random.default_rng(0)
    x = rng.standard_normal((9, 7, 3)).astype(np.float32)
    ys = rng.uniform(-2, 11, 6)
    xs = rng.uniform(-2, 9, 5)
    assert np.allclose(_kernels_numba.bilinear_sample(x, ys, xs), _kernels_numpy.bilinear_sample(x, ys, xs), atol=1e-6)
