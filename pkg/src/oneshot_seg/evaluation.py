"""Subset-restricted COCO-style metrics, aggregation and error analyses.

The matching and accumulation rules follow the reference COCO evaluator:
detections are matched greedily in score order at ten IoU thresholds
(0.50:0.05:0.95), crowd regions and out-of-range gts act as ignore zones,
and AP is the mean of the right-to-left precision envelope sampled at 101
recall points.  Size ranges are half-open: small ``< 32²``, medium
``[32², 96²)``, large ``>= 96²``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._backend import kernels
from .coco_data import RleMask, rle_translate
from .episodes import BASELINE_STREAM, episode_rng
from .errors import DataFormatError, EpisodeMismatchError
from .geometry import LARGE_AREA, SMALL_AREA, box_iou_matrix, mask_iou_matrix, xywh_to_xyxy

IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
MAX_DETS = (1, 10, 100)
AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, SMALL_AREA),
    "medium": (SMALL_AREA, LARGE_AREA),
    "large": (LARGE_AREA, math.inf),
}
METRIC_NAMES = ("AP", "AP50", "AP75", "APS", "APM", "APL", "AR1", "AR10", "AR100", "ARS", "ARM", "ARL")


@dataclass(frozen=True)
class Prediction:
    bbox: tuple  # (x, y, w, h) in image pixels
    score: float
    mask: Optional[RleMask] = None


@dataclass
class PredictionRecord:
    episode_id: str
    detections: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# per-unit matching


@dataclass
class _UnitResult:
    scores: np.ndarray  # (D,)
    matched: dict  # area -> (T, D) bool
    ignored: dict  # area -> (T, D) bool
    n_pos: dict  # area -> int


def _gt_area_ok(areas, rng):
    lo, hi = rng
    return (areas >= lo) & (areas < hi)


def _evaluate_unit(dets, gts, kind, dataset, thresholds, areas) -> _UnitResult:
    dets = sorted(dets, key=lambda d: -d.score)[: MAX_DETS[-1]]
    scores = np.array([d.score for d in dets], dtype=np.float64)
    crowd = np.array([g.iscrowd for g in gts], dtype=bool)
    gt_area = np.array([g.area for g in gts], dtype=np.float64)
    if kind == "box":
        dt_area = np.array([d.bbox[2] * d.bbox[3] for d in dets], dtype=np.float64)
        if dets and gts:
            ious = box_iou_matrix(
                xywh_to_xyxy(np.array([d.bbox for d in dets])),
                np.stack([g.box_xyxy for g in gts]),
                crowd,
            )
        else:
            ious = np.zeros((len(dets), len(gts)))
    else:
        for d in dets:
            if d.mask is None:
                raise EpisodeMismatchError("mask evaluation needs a mask on every detection")
        dt_area = np.array([d.mask.area for d in dets], dtype=np.float64)
        ious = mask_iou_matrix([d.mask for d in dets], [dataset.rle(g.id) for g in gts], crowd)
    k = kernels()
    matched, ignored, n_pos = {}, {}, {}
    nt = len(thresholds)
    for name in areas:
        rng = AREA_RANGES[name]
        gt_ig = crowd | ~_gt_area_ok(gt_area, rng)
        n_pos[name] = int((~gt_ig).sum())
        if not dets:
            matched[name] = np.zeros((nt, 0), dtype=bool)
            ignored[name] = np.zeros((nt, 0), dtype=bool)
            continue
        order = np.argsort(gt_ig, kind="stable")
        dt_gt, dt_ig, _ = k.greedy_match(
            np.ascontiguousarray(ious[:, order]), gt_ig[order], crowd[order], thresholds
        )
        hit = dt_gt >= 0
        out_of_range = ~_gt_area_ok(dt_area, rng)
        matched[name] = hit
        ignored[name] = dt_ig | (~hit & out_of_range[None, :])
    return _UnitResult(scores, matched, ignored, n_pos)


def match_detections(dets, gts, crowd_gts=(), iou_thr=0.5, max_dets=100):
    """Greedy matching for one image and category at a single IoU threshold.

    ``dets`` are ``(box_xyxy, score)`` pairs, ``gts``/``crowd_gts`` are boxes.
    Returns ``(status, gt_matched)`` where status per detection (in the input
    order) is ``"TP"``, ``"FP"``, ``"ignored"`` or ``"dropped"``.
    """
    dets = list(dets)
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    kept = order[:max_dets]
    all_gts = [np.asarray(g, dtype=np.float64) for g in gts] + [np.asarray(g, dtype=np.float64) for g in crowd_gts]
    crowd = np.array([False] * len(gts) + [True] * len(crowd_gts))
    status = ["dropped"] * len(dets)
    gt_matched = [False] * len(gts)
    if not kept:
        return status, gt_matched
    if not all_gts:
        for i in kept:
            status[i] = "FP"
        return status, gt_matched
    ious = box_iou_matrix(np.stack([dets[i][0] for i in kept]), np.stack(all_gts), crowd)
    dt_gt, dt_ig, gt_hit = kernels().greedy_match(ious, crowd, crowd, np.array([iou_thr]))
    for pos, i in enumerate(kept):
        if dt_gt[0, pos] < 0:
            status[i] = "FP"
        elif dt_ig[0, pos]:
            status[i] = "ignored"
        else:
            status[i] = "TP"
    gt_matched = [bool(v) for v in gt_hit[0, : len(gts)]]
    return status, gt_matched


# ---------------------------------------------------------------------------
# accumulation


def average_precision(tp, fp, n_gt, recall_thresholds=RECALL_THRESHOLDS) -> Optional[float]:
    """101-point interpolated AP from per-detection TP/FP flags already in score order.

    Entries with both flags false (ignored detections) do not move the curve.
    Returns ``None`` when there is no ground truth.
    """
    tp = np.asarray(tp, dtype=bool)
    fp = np.asarray(fp, dtype=bool)
    if n_gt == 0:
        return None
    q = _interp_precision(np.cumsum(tp)[None, :], np.cumsum(fp)[None, :], n_gt, recall_thresholds)[0]
    return float(q.mean())


def _interp_precision(tp_c, fp_c, n_gt, recall_thresholds):
    nt, nd = tp_c.shape
    out = np.zeros((nt, recall_thresholds.shape[0]))
    if nd == 0:
        return out
    rc = tp_c / n_gt
    denom = tp_c + fp_c
    with np.errstate(divide="ignore", invalid="ignore"):
        pr = np.where(denom > 0, tp_c / np.maximum(denom, 1), 0.0)
    env = np.maximum.accumulate(pr[:, ::-1], axis=1)[:, ::-1]
    for t in range(nt):
        idx = np.searchsorted(rc[t], recall_thresholds, side="left")
        valid = idx < nd
        out[t, valid] = env[t, idx[valid]]
    return out


def _accumulate(per_cat_units, n_thr, areas):
    """Precision (T, R, K, A, M) and recall (T, K, A, M) tables, -1 where absent."""
    k_n = len(per_cat_units)
    precision = -np.ones((n_thr, RECALL_THRESHOLDS.shape[0], k_n, len(areas), len(MAX_DETS)))
    recall = -np.ones((n_thr, k_n, len(areas), len(MAX_DETS)))
    for k, units in enumerate(per_cat_units):
        for a, name in enumerate(areas):
            n_pos = sum(u.n_pos[name] for u in units)
            if n_pos == 0:
                continue
            for m, md in enumerate(MAX_DETS):
                scores = np.concatenate([u.scores[:md] for u in units]) if units else np.zeros(0)
                if scores.shape[0] == 0:
                    precision[:, :, k, a, m] = 0.0
                    recall[:, k, a, m] = 0.0
                    continue
                hit = np.concatenate([u.matched[name][:, :md] for u in units], axis=1)
                ig = np.concatenate([u.ignored[name][:, :md] for u in units], axis=1)
                order = np.argsort(-scores, kind="mergesort")
                hit, ig = hit[:, order], ig[:, order]
                tp_c = np.cumsum(hit & ~ig, axis=1)
                fp_c = np.cumsum(~hit & ~ig, axis=1)
                precision[:, :, k, a, m] = _interp_precision(tp_c, fp_c, n_pos, RECALL_THRESHOLDS)
                recall[:, k, a, m] = tp_c[:, -1] / n_pos
    return precision, recall


def _mean_valid(x) -> Optional[float]:
    v = x[x > -1]
    return float(np.mean(v)) if v.size else None


# ---------------------------------------------------------------------------
# report types


@dataclass
class MetricsReport:
    kind: str
    metrics: dict  # name -> percentage or None
    per_category_ap50: dict  # category id -> percentage or None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "metrics": {k: self.metrics.get(k) for k in METRIC_NAMES},
            "per_category_ap50": {str(k): v for k, v in sorted(self.per_category_ap50.items())},
        }

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(
            kind=d["kind"],
            metrics={k: d["metrics"].get(k) for k in METRIC_NAMES},
            per_category_ap50={int(k): v for k, v in d["per_category_ap50"].items()},
        )


def _pct(v):
    return None if v is None else 100.0 * v


# ---------------------------------------------------------------------------
# evaluation entry points


def _index_predictions(predictions):
    if isinstance(predictions, dict):
        return predictions
    out = {}
    for rec in predictions:
        out.setdefault(rec.episode_id, []).extend(rec.detections)
    return out


def _build_units(predictions, episodes, dataset, subset, image_ids=None, relabel=None):
    """Detections and ground truth per (image, category) unit."""
    preds = _index_predictions(predictions)
    by_id = {e.episode_id: e for e in episodes}
    unknown = sorted(set(preds) - set(by_id))
    if unknown:
        raise EpisodeMismatchError(f"prediction for unknown episode_id {unknown[0]!r}")
    subset = set(subset)
    dets = {}
    seen = set()
    for e in episodes:
        if image_ids is not None and e.image_id not in image_ids:
            continue
        cat = e.category_id if relabel is None else relabel
        if relabel is None and cat not in subset:
            raise EpisodeMismatchError(
                f"episode {e.episode_id} has category {cat}, outside the evaluated subset"
            )
        key = (e.image_id, cat)
        if key in seen:
            raise EpisodeMismatchError(
                f"more than one episode for image {e.image_id}, category {cat}; evaluate one run at a time"
            )
        seen.add(key)
        dets[key] = list(preds.get(e.episode_id, ()))
    gts = {}
    for ann in dataset.annotations.values():
        if ann.category_id not in subset:
            continue
        if image_ids is not None and ann.image_id not in image_ids:
            continue
        gts.setdefault((ann.image_id, ann.category_id), []).append(ann)
    for v in gts.values():
        v.sort(key=lambda a: a.id)
    return dets, gts


def _run_units(keys, dets, gts, kind, dataset, thresholds, areas, workers):
    def work(key):
        return _evaluate_unit(dets.get(key, ()), gts.get(key, ()), kind, dataset, thresholds, areas)

    if workers and workers > 1:
        # masks are memoised on the dataset; fill the cache before fanning out
        if kind == "mask":
            for key in keys:
                for g in gts.get(key, ()):
                    dataset.rle(g.id)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, keys))
    else:
        results = [work(key) for key in keys]
    return dict(zip(keys, results))


def evaluate(predictions, episodes, dataset, category_subset, kind="box", image_ids=None, workers=1) -> MetricsReport:
    """Full metric suite for one run of episodes over ``category_subset``.

    Detections inherit the category of their episode's reference.
    """
    if kind not in ("box", "mask"):
        raise ValueError(f"kind must be 'box' or 'mask', got {kind!r}")
    cats = sorted(set(category_subset))
    if image_ids is not None:
        image_ids = set(image_ids)
    dets, gts = _build_units(predictions, episodes, dataset, cats, image_ids)
    keys = sorted(set(dets) | set(gts), key=lambda k: (k[1], k[0]))
    areas = tuple(AREA_RANGES)
    results = _run_units(keys, dets, gts, kind, dataset, IOU_THRESHOLDS, areas, workers)
    per_cat = {c: [] for c in cats}
    for key in keys:
        per_cat[key[1]].append(results[key])
    precision, recall = _accumulate([per_cat[c] for c in cats], IOU_THRESHOLDS.shape[0], areas)

    a = {n: i for i, n in enumerate(areas)}
    m100 = MAX_DETS.index(100)
    metrics = {
        "AP": _mean_valid(precision[:, :, :, a["all"], m100]),
        "AP50": _mean_valid(precision[0, :, :, a["all"], m100]),
        "AP75": _mean_valid(precision[5, :, :, a["all"], m100]),
        "APS": _mean_valid(precision[:, :, :, a["small"], m100]),
        "APM": _mean_valid(precision[:, :, :, a["medium"], m100]),
        "APL": _mean_valid(precision[:, :, :, a["large"], m100]),
        "AR1": _mean_valid(recall[:, :, a["all"], 0]),
        "AR10": _mean_valid(recall[:, :, a["all"], 1]),
        "AR100": _mean_valid(recall[:, :, a["all"], m100]),
        "ARS": _mean_valid(recall[:, :, a["small"], m100]),
        "ARM": _mean_valid(recall[:, :, a["medium"], m100]),
        "ARL": _mean_valid(recall[:, :, a["large"], m100]),
    }
    per_category = {c: _pct(_mean_valid(precision[0, :, i, a["all"], m100])) for i, c in enumerate(cats)}
    return MetricsReport(kind, {k: _pct(v) for k, v in metrics.items()}, per_category)


@dataclass
class ConfusionMatrix:
    category_ids: list
    values: np.ndarray  # (K, K) AP50 percentages; row = reference category

    @property
    def column_sums(self) -> np.ndarray:
        return self.values.sum(axis=0)


def confusion_matrix(predictions, episodes, dataset, kind="box", category_ids=None, workers=1) -> ConfusionMatrix:
    """AP50 of detections for reference category i scored as category j.

    Each row uses the images where category i episodes ran.  Entries with no
    ground truth of category j in those images are 0.  Several runs are
    averaged.
    """
    cats = sorted(category_ids if category_ids is not None else dataset.categories)
    pos = {c: i for i, c in enumerate(cats)}
    runs = sorted({(e.split, e.run) for e in episodes})
    total = np.zeros((len(cats), len(cats)))
    for sr in runs:
        eps_run = [e for e in episodes if (e.split, e.run) == sr]
        by_ref = {}
        for e in eps_run:
            by_ref.setdefault(e.category_id, []).append(e)
        for ci, eps_i in by_ref.items():
            if ci not in pos:
                continue
            images = {e.image_id for e in eps_i}
            for cj in cats:
                dets, gts = _build_units(restrict_predictions(predictions, eps_i), eps_i, dataset, [cj], images, relabel=cj)
                n_pos = sum(1 for v in gts.values() for g in v if not g.iscrowd)
                if n_pos == 0:
                    continue
                keys = sorted(set(dets) | set(gts), key=lambda k: (k[1], k[0]))
                res = _run_units(keys, dets, gts, kind, dataset, IOU_THRESHOLDS[:1], ("all",), workers)
                prec, _ = _accumulate([[res[k] for k in keys]], 1, ("all",))
                v = _mean_valid(prec[0, :, 0, 0, MAX_DETS.index(100)])
                total[pos[ci], pos[cj]] += 100.0 * (v or 0.0)
    if runs:
        total /= len(runs)
    return ConfusionMatrix(cats, total)


DEFAULT_CLUTTER_EDGES = (1, 5, 9, 17, 33)


@dataclass(frozen=True)
class ClutterBin:
    lo: int
    hi: Optional[int]  # exclusive; None means unbounded
    n_images: int
    ap50: Optional[float]

    @property
    def label(self) -> str:
        return f"{self.lo}+" if self.hi is None else f"{self.lo}-{self.hi - 1}"


def clutter_report(predictions, episodes, dataset, bin_edges=DEFAULT_CLUTTER_EDGES, category_subset=None,
                   kind="box", workers=1) -> list:
    """mAP50 per bucket of images grouped by their total non-crowd instance count.

    ``bin_edges`` are the inclusive lower bounds of consecutive buckets; the
    last bucket is open-ended.
    """
    edges = [int(e) for e in bin_edges]
    if not edges:
        raise ValueError("empty bin specification")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly increasing: {edges}")
    if category_subset is None:
        category_subset = sorted({e.category_id for e in episodes})
    counts = {i: 0 for i in dataset.images}
    for ann in dataset.annotations.values():
        if not ann.iscrowd:
            counts[ann.image_id] += 1
    episode_images = {e.image_id for e in episodes}
    out = []
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        members = {im for im, n in counts.items() if n >= lo and (hi is None or n < hi) and im in episode_images}
        if members:
            bucket = [e for e in episodes if e.image_id in members]
            rep = evaluate(restrict_predictions(predictions, bucket), bucket, dataset,
                           category_subset, kind, image_ids=members, workers=workers)
            ap50 = rep.metrics["AP50"]
        else:
            ap50 = None
        out.append(ClutterBin(lo, hi, len(members), ap50))
    return out


# ---------------------------------------------------------------------------
# run/split aggregation


@dataclass
class AggregateReport:
    per_split: dict  # split -> {"mean", "ci95", "runs"}
    grand_mean: float
    grand_ci95: Optional[float]

    def to_dict(self) -> dict:
        return {
            "per_split": {str(k): v for k, v in sorted(self.per_split.items())},
            "grand_mean": self.grand_mean,
            "grand_ci95": self.grand_ci95,
        }

    @classmethod
    def from_dict(cls, d) -> "AggregateReport":
        return cls({int(k): v for k, v in d["per_split"].items()}, d["grand_mean"], d["grand_ci95"])


def ci95_half_width(values) -> Optional[float]:
    """Normal-approximation 95% half-width, 1.96·s/√R; None for a single run."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] < 2:
        return None
    return float(1.96 * v.std(ddof=1) / math.sqrt(v.shape[0]))


def aggregate(values) -> AggregateReport:
    """Aggregate a metric given as ``{(split, run): value}`` over runs, then splits."""
    by_split = {}
    for (split, run), v in sorted(values.items()):
        by_split.setdefault(split, {})[run] = float(v)
    if not by_split:
        raise ValueError("nothing to aggregate")
    per_split = {}
    for s, runs in by_split.items():
        vals = [runs[r] for r in sorted(runs)]
        per_split[s] = {"mean": float(np.mean(vals)), "ci95": ci95_half_width(vals), "runs": len(vals)}
    grand = float(np.mean([per_split[s]["mean"] for s in sorted(per_split)]))
    run_sets = [set(r) for r in by_split.values()]
    grand_ci = None
    if all(rs == run_sets[0] for rs in run_sets):
        per_run = [np.mean([by_split[s][r] for s in sorted(by_split)]) for r in sorted(run_sets[0])]
        grand_ci = ci95_half_width(per_run)
    return AggregateReport(per_split, grand, grand_ci)


# ---------------------------------------------------------------------------
# synthetic predictors


def oracle_predictions(dataset, episodes) -> list:
    """Every non-crowd gt of the episode category, score 1, with its mask."""
    out = []
    for e in episodes:
        dets = []
        for ann in dataset.annotations_in(e.image_id, e.category_id, include_crowd=False):
            mask = dataset.rle(ann.id) if ann.segmentation is not None else None
            dets.append(Prediction(tuple(ann.bbox), 1.0, mask))
        out.append(PredictionRecord(e.episode_id, dets))
    return out


def random_baseline(dataset, episodes, seed=0, with_masks=True):
    """Ground-truth boxes of the episode category shifted to uniform random positions.

    Each box keeps its size and moves to a placement drawn uniformly among
    those fully inside the image; its mask moves rigidly with it (rounded to
    whole pixels).  Scores are uniform in [0.8, 1).  Returns
    ``(records, flagged)`` where ``flagged`` lists annotation ids whose box
    did not fit inside the image and was placed at the origin.
    """
    out, flagged = [], []
    for e in episodes:
        rng = episode_rng(seed, e.run, e.image_id, e.category_id, BASELINE_STREAM)
        img = dataset.images[e.image_id]
        dets = []
        for ann in dataset.annotations_in(e.image_id, e.category_id, include_crowd=False):
            x, y, w, h = ann.bbox
            room_x, room_y = img.width - w, img.height - h
            if room_x < 0 or room_y < 0:
                flagged.append(ann.id)
                nx, ny = 0.0, 0.0
            else:
                nx = float(rng.uniform(0.0, room_x))
                ny = float(rng.uniform(0.0, room_y))
            score = float(rng.uniform(0.8, 1.0))
            mask = None
            if with_masks and ann.segmentation is not None:
                mask = rle_translate(dataset.rle(ann.id), int(round(ny - y)), int(round(nx - x)))
            dets.append(Prediction((nx, ny, w, h), score, mask))
        out.append(PredictionRecord(e.episode_id, dets))
    return out, flagged


def restrict_predictions(predictions, episodes) -> list:
    """Records whose episode is in ``episodes``; used to evaluate one run of a multi-run file."""
    ids = {e.episode_id for e in episodes}
    return [r for r in predictions if r.episode_id in ids]


def group_by_run(episodes) -> dict:
    """``{(split, run): [episodes]}`` in sorted key order."""
    out = {}
    for e in episodes:
        out.setdefault((e.split, e.run), []).append(e)
    return dict(sorted(out.items()))


def check_predictions(predictions, episodes) -> None:
    ids = {e.episode_id for e in episodes}
    for rec in predictions:
        if rec.episode_id not in ids:
            raise EpisodeMismatchError(f"prediction for unknown episode_id {rec.episode_id!r}")
        for d in rec.detections:
            if not (0.0 <= d.score <= 1.0):
                raise DataFormatError(f"episode {rec.episode_id}: score {d.score} outside [0, 1]")


__all__ = [
    "AREA_RANGES",
    "IOU_THRESHOLDS",
    "METRIC_NAMES",
    "RECALL_THRESHOLDS",
    "AggregateReport",
    "ClutterBin",
    "ConfusionMatrix",
    "MetricsReport",
    "Prediction",
    "PredictionRecord",
    "aggregate",
    "average_precision",
    "check_predictions",
    "ci95_half_width",
    "clutter_report",
    "confusion_matrix",
    "evaluate",
    "group_by_run",
    "match_detections",
    "oracle_predictions",
    "random_baseline",
    "restrict_predictions",
]

