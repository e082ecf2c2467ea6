"""Multi-task loss values and RPN target assignment (no gradients)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import box_iou_matrix

LOSS_WEIGHTS = {"rpn_cls": 2.0, "rpn_box": 0.1, "roi_cls": 2.0, "roi_box": 0.5, "mask": 1.0}
EPS = 1e-7

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass(frozen=True)
class LossBreakdown:
    rpn_cls: float
    rpn_box: float
    roi_cls: float
    roi_box: float
    mask: float
    total: float


def total_loss(rpn_cls, rpn_box, roi_cls, roi_box, mask) -> LossBreakdown:
    parts = {"rpn_cls": rpn_cls, "rpn_box": rpn_box, "roi_cls": roi_cls, "roi_box": roi_box, "mask": mask}
    for name, v in parts.items():
        if v < 0:
            raise ValueError(f"loss component {name} is negative ({v})")
    total = sum(LOSS_WEIGHTS[k] * float(v) for k, v in parts.items())
    return LossBreakdown(**{k: float(v) for k, v in parts.items()}, total=total)


def bce(p, t) -> float:
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1-1e-7]."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    if p.size == 0:
        return 0.0
    exact = (p == t) & ((t == 0.0) | (t == 1.0))
    p = np.clip(p, EPS, 1.0 - EPS)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    # clamping would otherwise leave ~1e-7 on exact hits of a binary target
    loss[exact] = 0.0
    return float(loss.mean())


def smooth_l1(pred, target, positive=None) -> float:
    """Mean smooth-L1 (transition at 1) over the elements of contributing rows."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if positive is not None:
        positive = np.asarray(positive, dtype=bool)
        pred, target = pred[positive], target[positive]
    if pred.size == 0:
        return 0.0
    d = np.abs(pred - target)
    return float(np.where(d < 1.0, 0.5 * d * d, d - 0.5).mean())


def mask_bce(pred, target) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mask shape mismatch {pred.shape} vs {target.shape}")
    return bce(pred, target.astype(np.float64))


def assign_rpn_targets(anchors, gt_boxes, pos_iou=0.7, neg_iou=0.3, sample=256, pos_fraction=0.5, seed=0):
    """Label anchors positive (1), negative (0) or ignored (-1).

    Returns ``(labels, matched_gt)``; ``matched_gt`` is -1 where no gt overlaps.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n = anchors.shape[0]
    labels = np.full(n, IGNORE, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    if gt.shape[0] == 0:
        labels[:] = NEGATIVE
    else:
        iou = box_iou_matrix(anchors, gt)
        best = iou.max(axis=1)
        arg = iou.argmax(axis=1)
        matched = np.where(best > 0, arg, -1)
        labels[best < neg_iou] = NEGATIVE
        # every gt keeps its best anchor, even below the positive threshold
        for g in range(gt.shape[0]):
            a = int(np.argmax(iou[:, g]))
            if iou[a, g] > 0:
                labels[a] = POSITIVE
                matched[a] = g
        labels[best >= pos_iou] = POSITIVE
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(labels == POSITIVE)
    max_pos = int(sample * pos_fraction)
    if pos.shape[0] > max_pos:
        labels[rng.choice(pos, pos.shape[0] - max_pos, replace=False)] = IGNORE
    n_pos = int((labels == POSITIVE).sum())
    neg = np.flatnonzero(labels == NEGATIVE)
    max_neg = sample - n_pos
    if neg.shape[0] > max_neg:
        labels[rng.choice(neg, neg.shape[0] - max_neg, replace=False)] = IGNORE
    return labels, matched
