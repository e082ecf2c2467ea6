"""One-shot instance segmentation benchmark and matching-network inference."""

from ._version import __version__
from .coco_data import Dataset, RleMask, load_dataset, parse_dataset, rle_decode, rle_encode
from .episodes import Episode, make_split, sample_episodes
from .evaluation import (
    MetricsReport,
    Prediction,
    PredictionRecord,
    aggregate,
    confusion_matrix,
    clutter_report,
    evaluate,
    oracle_predictions,
    random_baseline,
)
from .geometry import box_iou_matrix, generate_anchors, mask_iou_matrix, nms

__all__ = [
    "__version__",
    "Dataset",
    "Episode",
    "MetricsReport",
    "Prediction",
    "PredictionRecord",
    "RleMask",
    "aggregate",
    "box_iou_matrix",
    "clutter_report",
    "confusion_matrix",
    "evaluate",
    "generate_anchors",
    "load_dataset",
    "make_split",
    "mask_iou_matrix",
    "nms",
    "oracle_predictions",
    "parse_dataset",
    "random_baseline",
    "rle_decode",
    "rle_encode",
    "sample_episodes",
]
