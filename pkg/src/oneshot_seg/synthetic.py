"""Small COCO-shaped datasets for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .categories import COCO_CATEGORIES
from .coco_data import polygon_to_rle, rle_decode


def _polygon(rng, x, y, w, h):
    """Random star-shaped polygon inscribed in the box, as a flat list."""
    n = int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.5, 1.0, n)
    cx, cy = x + w / 2, y + h / 2
    px = cx + rad * np.cos(ang) * w / 2
    py = cy + rad * np.sin(ang) * h / 2
    return [float(round(v, 2)) for pair in zip(px, py) for v in pair]


def synthetic_coco(n_images=20, categories=None, max_instances=6, seed=0, crowd_rate=0.05,
                   size_range=(64, 320)) -> dict:
    """A COCO-format dict with random polygon instances and occasional crowd RLEs.

    Boxes and areas are derived from the rasterised masks, as in real COCO
    files, so box/mask evaluation of ground truth against itself is exact.
    """
    rng = np.random.default_rng(seed)
    cats = list(categories) if categories is not None else [c[0] for c in COCO_CATEGORIES]
    names = {c[0]: c[1] for c in COCO_CATEGORIES}
    doc = {
        "images": [],
        "annotations": [],
        "categories": [{"id": c, "name": names.get(c, f"cat{c}"), "supercategory": ""} for c in cats],
    }
    ann_id = 1
    for image_id in range(1, n_images + 1):
        w = int(rng.integers(size_range[0], size_range[1] + 1))
        h = int(rng.integers(size_range[0], size_range[1] + 1))
        doc["images"].append({"id": image_id, "width": w, "height": h, "file_name": f"{image_id:012d}.jpg"})
        for _ in range(int(rng.integers(0, max_instances + 1))):
            cat = int(cats[int(rng.integers(len(cats)))])
            bw = float(rng.uniform(4, w * 0.8))
            bh = float(rng.uniform(4, h * 0.8))
            bx = float(rng.uniform(0, w - bw))
            by = float(rng.uniform(0, h - bh))
            crowd = bool(rng.random() < crowd_rate)
            poly = _polygon(rng, bx, by, bw, bh)
            rle = polygon_to_rle([poly], h, w)
            if rle.area == 0:
                continue
            mask = rle_decode(rle)
            ys, xs = np.nonzero(mask)
            x0, y0 = int(xs.min()), int(ys.min())
            seg = rle.to_coco() if crowd else [poly]
            if crowd:
                seg["counts"] = [int(v) for v in seg["counts"]]
            doc["annotations"].append({
                "id": ann_id,
                "image_id": image_id,
                "category_id": cat,
                "bbox": [x0, y0, int(xs.max()) + 1 - x0, int(ys.max()) + 1 - y0],
                "segmentation": seg,
                "area": int(rle.area),
                "iscrowd": int(crowd),
            })
            ann_id += 1
    return doc
