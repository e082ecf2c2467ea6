"""Siamese feature matching: FPN composition, reference embeddings and L1 matching."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor_kernels as tk
from .errors import DataFormatError, ShapeError

LEVELS = (2, 3, 4, 5, 6)
FPN_CHANNELS = 256
MATCH_CHANNELS = 384
IMAGENET_MEAN_RGB = (123.68, 116.78, 103.94)


@dataclass(frozen=True)
class BackboneFeatures:
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    c5: np.ndarray


@dataclass(frozen=True)
class PyramidFeatures:
    p2: np.ndarray
    p3: np.ndarray
    p4: np.ndarray
    p5: np.ndarray
    p6: np.ndarray

    def level(self, i: int) -> np.ndarray:
        return getattr(self, f"p{i}")

    @classmethod
    def from_levels(cls, maps) -> "PyramidFeatures":
        return cls(*(maps[i] for i in LEVELS))


@dataclass(frozen=True)
class ReferenceEmbedding:
    vectors: dict  # level -> (C,) float32
    shots: int = 1


@dataclass(frozen=True)
class Letterbox:
    """Geometry of an aspect-preserving resize followed by zero padding."""

    scale: float
    pad_top: int
    pad_left: int
    content_h: int
    content_w: int
    orig_h: int
    orig_w: int
    size: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_original(self, boxes) -> np.ndarray:
        """Map xyxy boxes from the padded frame back to original pixels (clipped)."""
        b = np.asarray(boxes, dtype=np.float64).copy()
        b[..., 0::2] = (b[..., 0::2] - self.pad_left) / self.scale
        b[..., 1::2] = (b[..., 1::2] - self.pad_top) / self.scale
        b[..., 0::2] = np.clip(b[..., 0::2], 0.0, self.orig_w)
        b[..., 1::2] = np.clip(b[..., 1::2], 0.0, self.orig_h)
        return b


def letterbox_geometry(height: int, width: int, size: int) -> Letterbox:
    if height <= 0 or width <= 0:
        raise ValueError("empty image")
    scale = size / max(height, width)
    ch = min(size, max(1, int(round(height * scale))))
    cw = min(size, max(1, int(round(width * scale))))
    return Letterbox(scale, (size - ch) // 2, (size - cw) // 2, ch, cw, height, width, size)


def letterbox(image, size: int, mean_rgb=IMAGENET_MEAN_RGB):
    """Resize the longer side to ``size``, zero-pad to square, subtract ``mean_rgb``.

    Padding is split evenly with any odd pixel going to the bottom/right.  The
    mean is subtracted after padding, so padded pixels hold ``-mean``.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a non-empty HxWx3 image, got shape {img.shape}")
    geo = letterbox_geometry(img.shape[0], img.shape[1], size)
    if (geo.content_h, geo.content_w) == img.shape[:2]:
        content = img
    else:
        content = tk.resize_bilinear(img, geo.content_h, geo.content_w)
    out = np.zeros((size, size, img.shape[2]), dtype=np.float32)
    out[geo.pad_top:geo.pad_top + geo.content_h, geo.pad_left:geo.pad_left + geo.content_w] = content
    out -= np.asarray(mean_rgb, dtype=np.float32)
    return out, geo


def preprocess_query(image, mean_rgb=IMAGENET_MEAN_RGB, size: int = 1024):
    return letterbox(image, size, mean_rgb)


def preprocess_reference(image, mean_rgb=IMAGENET_MEAN_RGB, size: int = 192):
    return letterbox(image, size, mean_rgb)


def reference_crop(dataset, ann_id: int, pixels) -> np.ndarray:
    """Pixels of the annotation's bounding box; no mask is applied."""
    ann = dataset.annotations.get(ann_id)
    if ann is None:
        raise DataFormatError(f"unknown annotation {ann_id}")
    if ann.iscrowd:
        raise ValueError(f"annotation {ann_id} is a crowd region, not a valid reference")
    x, y, w, h = ann.bbox
    pixels = np.asarray(pixels)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1 = min(int(math.ceil(x + w)), pixels.shape[1])
    y1 = min(int(math.ceil(y + h)), pixels.shape[0])
    if w <= 0 or h <= 0 or x1 <= x0 or y1 <= y0:
        raise ValueError(f"annotation {ann_id} has an empty box")
    return pixels[y0:y1, x0:x1].copy()


def _conv1x1(x, w, name, cin, cout):
    k = w.get(f"{name}.weight", (1, 1, cin, cout))
    b = w.get(f"{name}.bias", (cout,))
    return tk.conv2d(x, k, b, padding="valid")


def fpn_compose(c: BackboneFeatures, w) -> PyramidFeatures:
    """Lateral 1×1 convolutions plus top-down nearest upsampling; P6 subsamples P5."""
    maps = {}
    for lvl in (5, 4, 3, 2):
        ci = np.asarray(getattr(c, f"c{lvl}"), dtype=np.float32)
        lat = _conv1x1(ci, w, f"fpn.lateral{lvl}", ci.shape[2], FPN_CHANNELS)
        if lvl < 5:
            up = tk.upsample2x_nearest(maps[lvl + 1])
            if up.shape != lat.shape:
                raise ShapeError(f"C{lvl} is {ci.shape[:2]}, expected twice P{lvl + 1} {maps[lvl + 1].shape[:2]}")
            lat = lat + up
        maps[lvl] = lat
    maps[6] = tk.subsample2x(maps[5])
    return PyramidFeatures.from_levels(maps)


def pool_reference(ref: PyramidFeatures) -> ReferenceEmbedding:
    return ReferenceEmbedding({lvl: tk.global_avg_pool(ref.level(lvl)) for lvl in LEVELS}, shots=1)


def prototype(embeddings: Sequence[ReferenceEmbedding]) -> ReferenceEmbedding:
    """Element-wise mean of k single-shot embeddings.

    Values are sorted along the shot axis before summing so the result does
    not depend on the order of ``embeddings``.
    """
    embeddings = list(embeddings)
    if not embeddings:
        raise ValueError("prototype of an empty list")
    k = len(embeddings)
    vectors = {}
    for lvl in LEVELS:
        stack = np.stack([np.asarray(e.vectors[lvl], dtype=np.float32) for e in embeddings])
        if stack.ndim != 2:
            raise ShapeError("embedding vectors must be 1-D")
        vectors[lvl] = (np.sort(stack, axis=0).astype(np.float64).sum(axis=0) / k).astype(np.float32)
    return ReferenceEmbedding(vectors, shots=k)


def match_features(scene: PyramidFeatures, emb: ReferenceEmbedding, w) -> PyramidFeatures:
    """Per level: concat(P, |P - e|) reduced by a 1×1 conv to 384 channels."""
    out = {}
    for lvl in LEVELS:
        p = np.asarray(scene.level(lvl), dtype=np.float32)
        e = np.asarray(emb.vectors[lvl], dtype=np.float32)
        if e.shape != (p.shape[2],):
            raise ShapeError(f"level {lvl}: embedding length {e.shape} vs {p.shape[2]} channels")
        d = np.abs(p - e)
        both = np.concatenate([p, d], axis=2)
        out[lvl] = _conv1x1(both, w, f"match.reduce{lvl}", 2 * p.shape[2], MATCH_CHANNELS)
    return PyramidFeatures.from_levels(out)
