"""Numba vs pure-numpy kernel timings, plus an end-to-end evaluation run.

    python3 benchmarks/bench_kernels.py [--images 300] [--repeat 5]

Each row times the public API with the backend switched in-process; the first
call per backend is a warm-up so numba compile time is excluded.  conv2d is
absent: both backends share its BLAS implementation.
"""

import argparse
import time

import numpy as np

from oneshot_seg import _backend
from oneshot_seg import tensor_kernels as tk
from oneshot_seg.coco_data import parse_dataset, polygon_to_rle, rle_decode, rle_encode
from oneshot_seg.episodes import make_split, sample_episodes
from oneshot_seg.evaluation import evaluate, random_baseline
from oneshot_seg.geometry import box_iou_matrix, mask_iou_matrix, nms
from oneshot_seg.synthetic import synthetic_coco


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(images):
    r = np.random.default_rng(0)
    masks = [r.random((256, 256)) < 0.3 for _ in range(20)]
    blobs = [np.cumsum(r.random((256, 256)) < 0.05, axis=0) % 2 == 1 for _ in range(60)]
    rles = [rle_encode(m) for m in blobs]
    polys = [[list(r.uniform(0, 400, 40))] for _ in range(20)]
    xy = r.uniform(0, 900, (2000, 2))
    boxes = np.concatenate([xy, xy + r.uniform(10, 120, (2000, 2))], 1)
    scores = r.random(2000)
    fmap = r.standard_normal((64, 64, 64)).astype(np.float32)
    crops = r.uniform(0, 1, (200, 4))
    crops = np.column_stack([np.minimum(crops[:, 0], crops[:, 2]), np.minimum(crops[:, 1], crops[:, 3]),
                             np.maximum(crops[:, 0], crops[:, 2]) + 1e-3, np.maximum(crops[:, 1], crops[:, 3]) + 1e-3])
    crops = np.clip(crops, 0, 1)

    ds = parse_dataset(synthetic_coco(images, seed=1))
    split = make_split(1, ds.category_ids)
    eps = sample_episodes(ds, split, runs=1, seed=0)
    preds, _ = random_baseline(ds, eps, seed=0)

    def eval_fresh(kind):
        # drop the memoised masks so each timing pays for decoding
        ds._rle_cache.clear()
        evaluate(preds, eps, ds, split.test_ids, kind)

    return [
        ("rle_encode 20x 256²", lambda: [rle_encode(m) for m in masks]),
        ("rle_decode 60x 256²", lambda: [rle_decode(q) for q in rles]),
        ("mask_iou_matrix 60x60", lambda: mask_iou_matrix(rles, rles)),
        ("polygon_to_rle 20x 400²", lambda: [polygon_to_rle(p, 400, 400) for p in polys]),
        ("box_iou_matrix 2000x2000", lambda: box_iou_matrix(boxes, boxes)),
        ("nms 2000 boxes", lambda: nms(boxes, scores, 0.7)),
        ("bilinear_crop 200x 14²", lambda: [tk.bilinear_crop(fmap, c, 14) for c in crops]),
        (f"evaluate box, {images} images", lambda: eval_fresh("box")),
        (f"evaluate mask, {images} images", lambda: eval_fresh("mask")),
    ]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", type=int, default=300)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if not _backend.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rows = []
    saved = _backend.USE_NUMBA
    try:
        for name, fn in cases(args.images):
            t = {}
            for backend in ("numpy", "numba"):
                _backend.USE_NUMBA = backend == "numba"
                t[backend] = _time(fn, args.repeat)
            rows.append((name, t["numpy"], t["numba"]))
    finally:
        _backend.USE_NUMBA = saved
    w = max(len(r[0]) for r in rows)
    print(f"{'case':<{w}}  {'numpy ms':>10}  {'numba ms':>10}  {'speed-up':>8}")
    for name, a, b in rows:
        print(f"{name:<{w}}  {a * 1e3:>10.2f}  {b * 1e3:>10.2f}  {a / b:>7.1f}x")


if __name__ == "__main__":
    main()
