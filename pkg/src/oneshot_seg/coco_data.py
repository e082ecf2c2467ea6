"""COCO annotation parsing, run-length masks and polygon rasterisation.

Binary masks are plain ``numpy`` boolean arrays of shape ``(height, width)``.
Run-length masks use the COCO convention: runs are counted over the pixels in
column-major order, alternate zeros/ones and always start with a zero run
(which may be empty).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from ._backend import kernels
from .errors import DataFormatError


@dataclass(frozen=True)
class CategoryDef:
    id: int
    name: str
    supercategory: str = ""


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True)
class AnnotationRecord:
    id: int
    image_id: int
    category_id: int
    bbox: tuple  # (x, y, w, h), clipped to the image
    segmentation: Any  # list of flat polygons, RleMask, or None
    area: float
    iscrowd: bool

    @property
    def box_xyxy(self) -> np.ndarray:
        x, y, w, h = self.bbox
        return np.array([x, y, x + w, y + h], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RleMask:
    height: int
    width: int
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, RleMask):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and np.array_equal(self.counts, other.counts)
        )

    def __hash__(self):
        return hash((self.height, self.width, self.counts.tobytes()))

    def __repr__(self):
        return f"RleMask({self.height}x{self.width}, counts={self.counts.tolist()})"

    @property
    def area(self) -> int:
        return int(self.counts[1::2].sum())

    def to_coco(self) -> dict:
        return {"size": [self.height, self.width], "counts": self.counts.tolist()}

    @classmethod
    def from_coco(cls, obj: Mapping) -> "RleMask":
        try:
            h, w = (int(v) for v in obj["size"])
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"bad RLE object: {exc}") from exc
        if isinstance(counts, (str, bytes)):
            counts = decode_counts_string(counts)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or (counts < 0).any():
            raise DataFormatError("RLE counts must be a flat list of non-negative integers")
        if int(counts.sum()) != h * w:
            raise DataFormatError(f"RLE counts sum to {int(counts.sum())}, expected {h * w}")
        return cls(h, w, canonical_counts(counts, h * w))


def decode_counts_string(s) -> list:
    """Decode the compact character form of COCO RLE counts."""
    if isinstance(s, str):
        s = s.encode("ascii")
    counts = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = s[p] - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def encode_counts_string(counts) -> str:
    out = []
    counts = [int(c) for c in counts]
    for i, x in enumerate(counts):
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def canonical_counts(counts, total: int) -> np.ndarray:
    """Drop interior zero-length runs by merging their neighbours."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape[0] <= 1 or not (counts[1:] == 0).any():
        return counts
    ends = np.cumsum(counts)
    starts = ends - counts
    return kernels().intervals_to_counts(
        np.ascontiguousarray(starts[1::2]), np.ascontiguousarray(ends[1::2]), total
    )


def rle_encode(mask: np.ndarray) -> RleMask:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    flat = np.ascontiguousarray(mask.ravel(order="F"))
    return RleMask(h, w, kernels().rle_encode(flat))


def rle_decode(rle: RleMask) -> np.ndarray:
    n = rle.height * rle.width
    if int(rle.counts.sum()) != n:
        raise ValueError(f"RLE counts sum to {int(rle.counts.sum())}, expected {n}")
    flat = kernels().rle_decode(rle.counts, n)
    return flat.reshape((rle.width, rle.height)).T.copy()


def one_intervals(rle: RleMask):
    """Half-open [start, end) column-major index spans of the set pixels."""
    ends = np.cumsum(rle.counts)
    starts = ends - rle.counts
    s, e = starts[1::2], ends[1::2]
    keep = e > s
    return s[keep], e[keep]


def local_to_rle(local: np.ndarray, r0: int, c0: int, height: int, width: int) -> RleMask:
    """Encode a window mask placed at (r0, c0) inside a height × width canvas.

    Parts of the window that fall outside the canvas are discarded.
    """
    local = np.asarray(local, dtype=bool)
    h, w = local.shape
    rs, re = max(r0, 0), min(r0 + h, height)
    cs, ce = max(c0, 0), min(c0 + w, width)
    if rs >= re or cs >= ce:
        return RleMask(height, width, np.array([height * width], dtype=np.int64))
    local = local[rs - r0:re - r0, cs - c0:ce - c0]
    h, w = local.shape
    # a zero row under every column keeps runs from crossing columns
    padded = np.zeros((h + 1, w), dtype=bool)
    padded[:h] = local
    counts = kernels().rle_encode(np.ascontiguousarray(padded.ravel(order="F")))
    ends = np.cumsum(counts)
    starts = ends - counts
    s, e = starts[1::2], ends[1::2]
    col = s // (h + 1)
    row = s - col * (h + 1)
    full_s = (cs + col) * height + rs + row
    full_e = full_s + (e - s)
    return RleMask(height, width, kernels().intervals_to_counts(full_s, full_e, height * width))


def rle_translate(rle: RleMask, dy: int, dx: int) -> RleMask:
    """Shift a mask by whole pixels; pixels pushed off the canvas are lost."""
    h, w = rle.height, rle.width
    s, e = one_intervals(rle)
    if s.shape[0] == 0 or h == 0:
        return rle
    col_s = s // h
    col_e = (e - 1) // h
    n = col_e - col_s + 1
    piece = np.repeat(np.arange(s.shape[0]), n)
    first = np.cumsum(n) - n
    col = col_s[piece] + (np.arange(piece.shape[0]) - first[piece])
    ps = np.maximum(s[piece], col * h) - col * h
    pe = np.minimum(e[piece], (col + 1) * h) - col * h
    col = col + dx
    ps = np.clip(ps + dy, 0, h)
    pe = np.clip(pe + dy, 0, h)
    keep = (col >= 0) & (col < w) & (pe > ps)
    col, ps, pe = col[keep], ps[keep], pe[keep]
    return RleMask(h, w, kernels().intervals_to_counts(col * h + ps, col * h + pe, h * w))


def _flat_polygons(polygons):
    xs, ys, off = [], [], [0]
    for poly in polygons:
        pts = np.asarray(poly, dtype=np.float64).reshape(-1)
        if pts.shape[0] % 2:
            raise ValueError("polygon has an odd number of coordinates")
        if pts.shape[0] < 6:
            raise ValueError(f"degenerate polygon with {pts.shape[0] // 2} vertices (need >= 3)")
        xs.append(pts[0::2])
        ys.append(pts[1::2])
        off.append(off[-1] + pts.shape[0] // 2)
    if not xs:
        return np.zeros(0), np.zeros(0), np.zeros(1, dtype=np.int64)
    return np.concatenate(xs), np.concatenate(ys), np.asarray(off, dtype=np.int64)


def _as_flat(poly):
    pts = np.asarray(poly, dtype=np.float64)
    return pts.reshape(-1)


def polygon_rasterize(polygons: Sequence, height: int, width: int) -> np.ndarray:
    """Rasterise polygons by sampling pixel centres with the even-odd rule.

    Each polygon is either a flat ``[x0, y0, x1, y1, ...]`` list or a sequence of
    ``(x, y)`` points.  A pixel is set when its centre lies inside any polygon.
    """
    xs, ys, off = _flat_polygons([_as_flat(p) for p in polygons])
    return kernels().polygon_fill(xs, ys, off, 0, 0, height, width)


def polygon_to_rle(polygons: Sequence, height: int, width: int) -> RleMask:
    """Same pixels as :func:`polygon_rasterize`, filled only inside the vertex window."""
    xs, ys, off = _flat_polygons([_as_flat(p) for p in polygons])
    if xs.shape[0] == 0:
        return RleMask(height, width, np.array([height * width], dtype=np.int64))
    r0 = max(int(math.floor(ys.min())) - 1, 0)
    r1 = min(int(math.ceil(ys.max())) + 1, height)
    c0 = max(int(math.floor(xs.min())) - 1, 0)
    c1 = min(int(math.ceil(xs.max())) + 1, width)
    if r1 <= r0 or c1 <= c0:
        return RleMask(height, width, np.array([height * width], dtype=np.int64))
    local = kernels().polygon_fill(xs, ys, off, r0, c0, r1 - r0, c1 - c0)
    return local_to_rle(local, r0, c0, height, width)


def _usable_polygons(segmentation):
    # COCO files occasionally carry 1- or 2-point fragments; they cover no pixel centres
    return [p for p in segmentation if len(p) >= 6]


def mask_rle_of(ann: AnnotationRecord, image: ImageRecord) -> RleMask:
    seg = ann.segmentation
    if seg is None:
        raise DataFormatError(f"annotation {ann.id} has no segmentation")
    if isinstance(seg, RleMask):
        if (seg.height, seg.width) != (image.height, image.width):
            raise DataFormatError(
                f"annotation {ann.id}: RLE size {seg.height}x{seg.width} does not match "
                f"image {image.id} ({image.height}x{image.width})"
            )
        return seg
    return polygon_to_rle(_usable_polygons(seg), image.height, image.width)


def mask_of(ann: AnnotationRecord, image: ImageRecord) -> np.ndarray:
    return rle_decode(mask_rle_of(ann, image))


@dataclass(eq=False)
class Dataset:
    categories: dict
    images: dict
    annotations: dict
    presence_index: dict
    image_annotations: dict = field(repr=False)
    _rle_cache: dict = field(default_factory=dict, repr=False)

    @property
    def category_ids(self) -> list:
        return sorted(self.categories)

    def image_of(self, ann_id: int) -> ImageRecord:
        return self.images[self.annotations[ann_id].image_id]

    def annotations_in(self, image_id: int, category_id=None, include_crowd=True) -> list:
        out = []
        for aid in self.image_annotations.get(image_id, ()):
            a = self.annotations[aid]
            if category_id is not None and a.category_id != category_id:
                continue
            if a.iscrowd and not include_crowd:
                continue
            out.append(a)
        return out

    def present_categories(self, image_id: int) -> list:
        return sorted({a.category_id for a in self.annotations_in(image_id, include_crowd=False)})

    def rle(self, ann_id: int) -> RleMask:
        """Full-image RLE of an annotation's segmentation, memoised."""
        m = self._rle_cache.get(ann_id)
        if m is None:
            ann = self.annotations[ann_id]
            m = mask_rle_of(ann, self.images[ann.image_id])
            self._rle_cache[ann_id] = m
        return m


def _require(obj, key, what):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise DataFormatError(f"{what}: missing required field '{key}'") from None


def parse_dataset(content) -> Dataset:
    """Parse COCO annotation content (bytes, str or an already-loaded dict)."""
    if isinstance(content, (bytes, bytearray, str)):
        try:
            doc = json.loads(content)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DataFormatError(f"annotation file is not valid JSON: {exc}") from exc
    else:
        doc = content
    if not isinstance(doc, dict):
        raise DataFormatError("annotation document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise DataFormatError(f"annotation document lacks a '{key}' array")

    categories = {}
    for c in doc["categories"]:
        cid = int(_require(c, "id", "category"))
        if cid in categories:
            raise DataFormatError(f"duplicate category id {cid}")
        if cid < 1:
            raise DataFormatError(f"category id {cid} must be >= 1")
        categories[cid] = CategoryDef(cid, str(_require(c, "name", f"category {cid}")),
                                      str(c.get("supercategory", "")))

    images = {}
    for im in doc["images"]:
        iid = int(_require(im, "id", "image"))
        w = int(_require(im, "width", f"image {iid}"))
        h = int(_require(im, "height", f"image {iid}"))
        if w <= 0 or h <= 0:
            raise DataFormatError(f"image {iid} has non-positive size {w}x{h}")
        if iid in images:
            raise DataFormatError(f"duplicate image id {iid}")
        images[iid] = ImageRecord(iid, w, h, str(im.get("file_name", "")))

    annotations = {}
    image_annotations = {}
    for a in doc["annotations"]:
        aid = int(_require(a, "id", "annotation"))
        what = f"annotation {aid}"
        iid = int(_require(a, "image_id", what))
        cid = int(_require(a, "category_id", what))
        if iid not in images:
            raise DataFormatError(f"annotation {aid} refers to unknown image_id {iid}")
        if cid not in categories:
            raise DataFormatError(f"annotation {aid} refers to unknown category_id {cid}")
        if aid in annotations:
            raise DataFormatError(f"duplicate annotation id {aid}")
        im = images[iid]
        bbox = _require(a, "bbox", what)
        try:
            x, y, w, h = (float(v) for v in bbox)
        except (TypeError, ValueError):
            raise DataFormatError(f"annotation {aid}: bbox must have four numbers") from None
        x1, y1 = min(max(x, 0.0), im.width), min(max(y, 0.0), im.height)
        x2, y2 = min(max(x + max(w, 0.0), 0.0), im.width), min(max(y + max(h, 0.0), 0.0), im.height)
        seg = a.get("segmentation")
        if isinstance(seg, dict):
            seg = RleMask.from_coco(seg)
        elif isinstance(seg, list):
            if seg and not isinstance(seg[0], (list, tuple)):
                seg = [seg]
            seg = [list(map(float, p)) for p in seg]
        elif seg is not None:
            raise DataFormatError(f"annotation {aid}: unsupported segmentation type")
        area = a.get("area")
        annotations[aid] = AnnotationRecord(
            id=aid,
            image_id=iid,
            category_id=cid,
            bbox=(x1, y1, x2 - x1, y2 - y1),
            segmentation=seg,
            area=float(area) if area is not None else (x2 - x1) * (y2 - y1),
            iscrowd=bool(a.get("iscrowd", 0)),
        )
        image_annotations.setdefault(iid, []).append(aid)

    presence = {cid: [] for cid in categories}
    for aid in sorted(annotations):
        a = annotations[aid]
        if not a.iscrowd:
            presence[a.category_id].append((a.image_id, aid))
    for cid in presence:
        presence[cid].sort()
    for iid in image_annotations:
        image_annotations[iid].sort()
    return Dataset(categories, images, annotations, presence, image_annotations)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())
