"""Boxes, overlaps, NMS, anchors and box-delta coding.

Boxes are ``float64`` arrays in corner form ``(x1, y1, x2, y2)``, either a
single ``(4,)`` box or an ``(N, 4)`` stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .coco_data import RleMask

SMALL_AREA = 32.0 ** 2
LARGE_AREA = 96.0 ** 2


def xywh_to_xyxy(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    out = b.copy()
    out[..., 2] = b[..., 0] + b[..., 2]
    out[..., 3] = b[..., 1] + b[..., 3]
    return out


def xyxy_to_xywh(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    out = b.copy()
    out[..., 2] = b[..., 2] - b[..., 0]
    out[..., 3] = b[..., 3] - b[..., 1]
    return out


def box_iou_matrix(a, b, crowd=None) -> np.ndarray:
    """Pairwise IoU.  For ``crowd`` columns the union is the area of the row box."""
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    if crowd is None:
        crowd = np.zeros(b.shape[0], dtype=np.bool_)
    return kernels().box_iou_matrix(a, b, np.asarray(crowd, dtype=np.bool_))


def box_iou(a, b) -> float:
    return float(box_iou_matrix(a, b)[0, 0])


def _stack_rles(masks):
    counts = [m.counts for m in masks]
    off = np.zeros(len(counts) + 1, dtype=np.int64)
    if counts:
        off[1:] = np.cumsum([c.shape[0] for c in counts])
        cat = np.concatenate(counts)
    else:
        cat = np.zeros(0, dtype=np.int64)
    return cat, off


def mask_iou_matrix(dets, gts, crowd=None) -> np.ndarray:
    """Pairwise IoU of RLE masks; crowd columns divide by the detection area."""
    dets, gts = list(dets), list(gts)
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    size = (dets[0].height, dets[0].width)
    for m in dets + gts:
        if (m.height, m.width) != size:
            raise ValueError(f"mask size {(m.height, m.width)} differs from {size}")
    ca, oa = _stack_rles(dets)
    cb, ob = _stack_rles(gts)
    inter = kernels().rle_intersection_matrix(ca, oa, cb, ob).astype(np.float64)
    area_d = np.array([m.area for m in dets], dtype=np.float64)
    area_g = np.array([m.area for m in gts], dtype=np.float64)
    if crowd is None:
        crowd = np.zeros(len(gts), dtype=bool)
    union = np.where(np.asarray(crowd, dtype=bool)[None, :], area_d[:, None],
                     area_d[:, None] + area_g[None, :] - inter)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def mask_iou(a: RleMask, b: RleMask) -> float:
    return float(mask_iou_matrix([a], [b])[0, 0])


def nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy suppression; returns kept indices by descending score (ties: lower index)."""
    boxes = np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    scores = np.ascontiguousarray(np.asarray(scores, dtype=np.float64))
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("boxes and scores differ in length")
    return kernels().nms(boxes, scores, float(iou_threshold))


@dataclass(frozen=True)
class AnchorSet:
    boxes: np.ndarray  # (N, 4)
    levels: np.ndarray  # (N,) pyramid level 2..6
    shapes: tuple  # feature-map (rows, cols) per level

    def __len__(self):
        return self.boxes.shape[0]


def generate_anchors(
    image_size,
    ratios=(0.5, 1.0, 2.0),
    scales=(32, 64, 128, 256, 512),
    strides=(4, 8, 16, 32, 64),
) -> AnchorSet:
    """Anchors at every feature-map cell of levels 2..6.

    Order is level-major, then row-major over cells, then by ratio.  A ratio
    ``r`` yields width ``scale*sqrt(r)`` and height ``scale/sqrt(r)``.
    """
    if np.isscalar(image_size):
        height = width = int(image_size)
    else:
        height, width = (int(v) for v in image_size)
    if len(scales) != len(strides):
        raise ValueError("scales and strides must pair up")
    top = max(strides)
    if height % top or width % top:
        raise ValueError(f"image size {height}x{width} is not divisible by stride {top}")
    ratios = np.asarray(ratios, dtype=np.float64)
    boxes, levels, shapes = [], [], []
    for lvl, (scale, stride) in enumerate(zip(scales, strides), start=2):
        rows, cols = height // stride, width // stride
        ws = scale * np.sqrt(ratios)
        hs = scale / np.sqrt(ratios)
        cy = (np.arange(rows) + 0.5) * stride
        cx = (np.arange(cols) + 0.5) * stride
        cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
        cyy = cyy[:, :, None]
        cxx = cxx[:, :, None]
        b = np.stack(
            [cxx - ws / 2, cyy - hs / 2, cxx + ws / 2, cyy + hs / 2], axis=-1
        ).reshape(-1, 4)
        boxes.append(b)
        levels.append(np.full(b.shape[0], lvl, dtype=np.int64))
        shapes.append((rows, cols))
    return AnchorSet(np.concatenate(boxes), np.concatenate(levels), tuple(shapes))


def anchor_count(image_size, strides=(4, 8, 16, 32, 64), per_location=3) -> int:
    if np.isscalar(image_size):
        height = width = int(image_size)
    else:
        height, width = (int(v) for v in image_size)
    return per_location * sum((height // s) * (width // s) for s in strides)


def _centre_form(b):
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return b[..., 0] + 0.5 * w, b[..., 1] + 0.5 * h, w, h


def encode_deltas(anchor, target) -> np.ndarray:
    """(tx, ty, tw, th) that move ``anchor`` onto ``target``."""
    anchor = np.asarray(anchor, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    ax, ay, aw, ah = _centre_form(anchor)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchor must have positive width and height")
    tx, ty, tw, th = _centre_form(target)
    with np.errstate(divide="ignore"):
        return np.stack([(tx - ax) / aw, (ty - ay) / ah, np.log(tw / aw), np.log(th / ah)], axis=-1)


def apply_deltas(anchor, deltas) -> np.ndarray:
    anchor = np.asarray(anchor, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    ax, ay, aw, ah = _centre_form(anchor)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchor must have positive width and height")
    cx = ax + deltas[..., 0] * aw
    cy = ay + deltas[..., 1] * ah
    w = aw * np.exp(deltas[..., 2])
    h = ah * np.exp(deltas[..., 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def clip_box(b, image_size) -> np.ndarray:
    """Intersect with the image rectangle ``[0, width] × [0, height]``."""
    if np.isscalar(image_size):
        height = width = float(image_size)
    else:
        height, width = (float(v) for v in image_size)
    b = np.asarray(b, dtype=np.float64)
    out = b.copy()
    out[..., 0::2] = np.clip(b[..., 0::2], 0.0, width)
    out[..., 1::2] = np.clip(b[..., 1::2], 0.0, height)
    return out


def area_bin(area: float) -> str:
    if area < SMALL_AREA:
        return "small"
    if area < LARGE_AREA:
        return "medium"
    return "large"
