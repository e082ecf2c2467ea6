"""Detection pipeline on matched features: RPN, proposals, box/class and mask heads.

Weight names used here (shapes in HxWxCinxCout / in×out order)::

    rpn.conv        3×3×384×512      rpn.cls   1×1×512×6      rpn.bbox  1×1×512×12
    head.fc1        75264×F          head.fc2  F×F
    head.cls        F×2              head.bbox F×4
    mask.conv1..4   3×3×Cin×M  (+ mask.bn1..4.{mean,var,gamma,beta})
    mask.deconv     2×2×M×M          mask.out  1×1×M×2

``F`` and ``M`` are read from the weights; every tensor has a matching ``.bias``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry as geo
from . import tensor_kernels as tk
from .coco_data import RleMask, local_to_rle
from .matching import (
    MATCH_CHANNELS,
    BackboneFeatures,
    Letterbox,
    PyramidFeatures,
    fpn_compose,
    match_features,
    pool_reference,
    prototype,
)

ANCHORS_PER_LOCATION = 3
ROI_LEVELS = (2, 3, 4, 5)


@dataclass(frozen=True)
class DetectConfig:
    input_size: int = 1024
    pre_nms: int = 6000
    rpn_nms: float = 0.7
    post_nms: int = 1000
    score_threshold: float = 0.05
    detection_nms: float = 0.5
    max_detections: int = 100
    mask_threshold: float = 0.5


@dataclass(frozen=True)
class Proposals:
    boxes: np.ndarray  # (N, 4) in the padded input frame
    objectness: np.ndarray  # (N,)

    def __len__(self):
        return self.boxes.shape[0]


@dataclass
class Detection:
    box: np.ndarray  # xyxy, original image pixels
    score: float
    mask: RleMask = None
    episode_key: tuple = field(default=())


def _w(w, name, shape):
    return w.get(f"{name}.weight", shape), w.get(f"{name}.bias", (shape[-1],))


def rpn_forward(matched: PyramidFeatures, w):
    """Objectness and deltas per anchor, aligned with :func:`geometry.generate_anchors`."""
    ck, cb = _w(w, "rpn.conv", (3, 3, MATCH_CHANNELS, None))
    hidden = ck.shape[3]
    lk, lb = _w(w, "rpn.cls", (1, 1, hidden, 2 * ANCHORS_PER_LOCATION))
    dk, db = _w(w, "rpn.bbox", (1, 1, hidden, 4 * ANCHORS_PER_LOCATION))
    scores, deltas = [], []
    for lvl in (2, 3, 4, 5, 6):
        h = tk.relu(tk.conv2d(matched.level(lvl), ck, cb, padding="same"))
        logits = tk.conv2d(h, lk, lb, padding="valid").reshape(-1, 2)
        scores.append(tk.softmax(logits, axis=1)[:, 1])
        deltas.append(tk.conv2d(h, dk, db, padding="valid").reshape(-1, 4))
    return np.concatenate(scores), np.concatenate(deltas)


def select_proposals(scores, deltas, anchors, image_size, pre_nms=6000, nms_thr=0.7, post_nms=1000) -> Proposals:
    scores = np.asarray(scores, dtype=np.float64)
    boxes = anchors.boxes if isinstance(anchors, geo.AnchorSet) else np.asarray(anchors, dtype=np.float64)
    if not (scores.shape[0] == boxes.shape[0] == np.asarray(deltas).shape[0]):
        raise ValueError("scores, deltas and anchors must be aligned")
    order = np.argsort(-scores, kind="mergesort")[:pre_nms]
    cand = geo.clip_box(geo.apply_deltas(boxes[order], np.asarray(deltas)[order]), image_size)
    sc = scores[order]
    ok = (cand[:, 2] > cand[:, 0]) & (cand[:, 3] > cand[:, 1])
    cand, sc = cand[ok], sc[ok]
    keep = geo.nms(cand, sc, nms_thr)[:post_nms]
    return Proposals(cand[keep], sc[keep])


def roi_features(matched: PyramidFeatures, boxes, out_size: int, image_size) -> np.ndarray:
    """Bilinear crops from P2..P5 concatenated along channels: (N, s, s, 4*384)."""
    if np.isscalar(image_size):
        ih = iw = float(image_size)
    else:
        ih, iw = (float(v) for v in image_size)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if np.any(boxes[:, 2] < boxes[:, 0]) or np.any(boxes[:, 3] < boxes[:, 1]):
        raise ValueError("inverted box")
    out = []
    for b in boxes:
        norm = np.clip([b[1] / ih, b[0] / iw, b[3] / ih, b[2] / iw], 0.0, 1.0)
        crops = [tk.bilinear_crop(matched.level(lvl), norm, out_size) for lvl in ROI_LEVELS]
        out.append(np.concatenate(crops, axis=2))
    if not out:
        c = sum(matched.level(lvl).shape[2] for lvl in ROI_LEVELS)
        return np.zeros((0, out_size, out_size, c), dtype=np.float32)
    return np.stack(out)


def classify_and_regress(roi, w):
    """Match probability and class-agnostic deltas for one RoI or a batch."""
    roi = np.asarray(roi, dtype=np.float32)
    single = roi.ndim == 3
    flat = roi.reshape(1 if single else roi.shape[0], -1)
    k1, b1 = _w(w, "head.fc1", (flat.shape[1], None))
    k2, b2 = _w(w, "head.fc2", (k1.shape[1], None))
    kc, bc = _w(w, "head.cls", (k2.shape[1], 2))
    kb, bb = _w(w, "head.bbox", (k2.shape[1], 4))
    h = tk.relu(tk.dense(flat, k1, b1))
    h = tk.relu(tk.dense(h, k2, b2))
    prob = tk.softmax(tk.dense(h, kc, bc), axis=1)[:, 1]
    deltas = tk.dense(h, kb, bb)
    if single:
        return float(prob[0]), deltas[0]
    return prob, deltas


def mask_head(roi, w) -> np.ndarray:
    """Foreground probabilities (2s × 2s) for one s×s RoI."""
    x = np.asarray(roi, dtype=np.float32)
    for i in range(1, 5):
        k, b = _w(w, f"mask.conv{i}", (3, 3, x.shape[2], None))
        x = tk.conv2d(x, k, b, padding="same")
        c = k.shape[3]
        bn = [w.get(f"mask.bn{i}.{p}", (c,)) for p in ("mean", "var", "gamma", "beta")]
        x = tk.relu(tk.batchnorm_inference(x, *bn))
    k, b = _w(w, "mask.deconv", (2, 2, x.shape[2], None))
    x = tk.relu(tk.conv_transpose_2x2_s2(x, k, b))
    k, b = _w(w, "mask.out", (1, 1, x.shape[2], 2))
    logits = tk.conv2d(x, k, b, padding="valid")
    return tk.softmax(logits, axis=2)[:, :, 1]


def paste_mask(prob_map, box, image_hw, threshold: float = 0.5) -> RleMask:
    """Resize a probability map into the pixel box, threshold (>=) and encode."""
    height, width = (int(v) for v in image_hw)
    b = np.asarray(box, dtype=np.float64)
    x0, y0 = int(np.floor(b[0])), int(np.floor(b[1]))
    x1, y1 = int(np.ceil(b[2])), int(np.ceil(b[3]))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, width), min(y1, height)
    if x1 <= x0 or y1 <= y0:
        return RleMask(height, width, np.array([height * width], dtype=np.int64))
    m = np.asarray(prob_map, dtype=np.float32)[:, :, None]
    local = tk.resize_bilinear(m, y1 - y0, x1 - x0)[:, :, 0] >= threshold
    return local_to_rle(local, y0, x0, height, width)


def detect(
    scene: BackboneFeatures,
    references: Sequence[BackboneFeatures],
    w,
    letterbox: Letterbox,
    config: DetectConfig = DetectConfig(),
    episode_key=(),
) -> list:
    """Run the matching network for one episode; boxes/masks in original pixels."""
    if not references:
        raise ValueError("at least one reference is required")
    size = config.input_size
    scene_p = fpn_compose(scene, w)
    emb = prototype([pool_reference(fpn_compose(r, w)) for r in references])
    matched = match_features(scene_p, emb, w)
    anchors = geo.generate_anchors(size)
    scores, deltas = rpn_forward(matched, w)
    if scores.shape[0] != len(anchors):
        raise ValueError(
            f"RPN produced {scores.shape[0]} outputs for {len(anchors)} anchors; "
            f"features do not match a {size}x{size} input"
        )
    props = select_proposals(scores, deltas, anchors, size, config.pre_nms, config.rpn_nms, config.post_nms)
    if len(props) == 0:
        return []
    prob, refine = classify_and_regress(roi_features(matched, props.boxes, 7, size), w)
    boxes = geo.clip_box(geo.apply_deltas(props.boxes, refine), size)
    ok = (prob >= config.score_threshold) & (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, prob = boxes[ok], np.asarray(prob, dtype=np.float64)[ok]
    keep = geo.nms(boxes, prob, config.detection_nms)[: config.max_detections]
    boxes, prob = boxes[keep], prob[keep]
    if boxes.shape[0] == 0:
        return []
    rois = roi_features(matched, boxes, 14, size)
    orig = letterbox.to_original(boxes)
    out = []
    for box, score, roi in zip(orig, prob, rois):
        mask = paste_mask(mask_head(roi, w), box, (letterbox.orig_h, letterbox.orig_w), config.mask_threshold)
        out.append(Detection(box, float(score), mask, episode_key))
    return out
