"""Tensor container files, weight bundles and backbone-activation stores.

Container layout (all integers little-endian)::

    b"OSWC"  u32 version  u64 manifest_length  manifest(JSON, utf-8)  blob

The manifest maps ``tensors`` names to ``{"shape", "dtype", "offset"}`` where
``offset`` counts bytes from the start of the blob and ``dtype`` is always
``"float32"`` (little-endian IEEE-754).  An optional ``meta`` object carries
free-form metadata such as the letterbox geometry of an activation file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError, SchemaVersionError, WeightError

MAGIC = b"OSWC"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def write_container(path, tensors: dict, meta=None) -> None:
    manifest = {"tensors": {}, "meta": meta or {}}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        manifest["tensors"][name] = {"shape": list(arr.shape), "dtype": "float32", "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def read_container(path):
    """Return ``(tensors, meta)``; tensors are read-only float32 arrays."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated container header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: not a tensor container")
    if version != VERSION:
        raise SchemaVersionError(f"{path}: container version {version}, expected {VERSION}")
    start = _HEADER.size
    try:
        manifest = json.loads(data[start:start + mlen])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: bad manifest: {exc}") from exc
    blob = memoryview(data)[start + mlen:]
    tensors = {}
    spans = []
    for name, info in manifest.get("tensors", {}).items():
        if info.get("dtype") != "float32":
            raise DataFormatError(f"{path}: tensor {name} has unsupported dtype {info.get('dtype')}")
        shape = tuple(int(s) for s in info["shape"])
        off = int(info["offset"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off < 0 or off + nbytes > len(blob):
            raise DataFormatError(f"{path}: tensor {name} runs past the end of the blob")
        spans.append((off, off + nbytes, name))
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
        tensors[name] = arr
    spans.sort()
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise DataFormatError(f"{path}: tensors {n0} and {n1} overlap")
    return tensors, manifest.get("meta", {})


class WeightBundle:
    """Named weight tensors with shape-checked lookup."""

    def __init__(self, tensors: dict):
        self._t = {k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}

    @classmethod
    def load(cls, path) -> "WeightBundle":
        tensors, _ = read_container(path)
        return cls(tensors)

    def save(self, path) -> None:
        write_container(path, self._t)

    def __contains__(self, name):
        return name in self._t

    def names(self):
        return sorted(self._t)

    def manifest(self) -> dict:
        return {k: list(v.shape) for k, v in sorted(self._t.items())}

    def get(self, name: str, shape=None) -> np.ndarray:
        """Fetch a tensor; ``shape`` entries of ``None`` match any size."""
        try:
            arr = self._t[name]
        except KeyError:
            raise WeightError(f"missing weight tensor '{name}'") from None
        if shape is not None:
            if arr.ndim != len(shape) or any(
                want is not None and want != got for want, got in zip(shape, arr.shape)
            ):
                raise WeightError(f"weight '{name}' has shape {arr.shape}, expected {tuple(shape)}")
        return arr


BACKBONE_CHANNELS = {2: 256, 3: 512, 4: 1024, 5: 2048}


class ActivationStore:
    """Directory of backbone activations, one container per image or reference.

    Files are ``image_<image_id>.oswc`` and ``ref_<annotation_id>.oswc``, each
    holding tensors ``C2`` .. ``C5`` and a ``meta.letterbox`` object.
    """

    def __init__(self, root):
        self.root = Path(root)

    def image_path(self, image_id: int) -> Path:
        return self.root / f"image_{image_id}.oswc"

    def reference_path(self, ann_id: int) -> Path:
        return self.root / f"ref_{ann_id}.oswc"

    def _load(self, path):
        from .matching import BackboneFeatures, Letterbox

        if not path.exists():
            raise FileNotFoundError(f"missing activations {path}")
        tensors, meta = read_container(path)
        feats = []
        for lvl, ch in BACKBONE_CHANNELS.items():
            t = tensors.get(f"C{lvl}")
            if t is None:
                raise DataFormatError(f"{path}: missing tensor C{lvl}")
            if t.ndim != 3 or t.shape[2] != ch:
                raise DataFormatError(f"{path}: C{lvl} has shape {t.shape}, expected HxWx{ch}")
            feats.append(t)
        lb = meta.get("letterbox")
        return BackboneFeatures(*feats), (Letterbox(**lb) if lb else None)

    def image(self, image_id: int):
        return self._load(self.image_path(image_id))

    def reference(self, ann_id: int):
        return self._load(self.reference_path(ann_id))

    def save(self, path, features, letterbox=None) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        tensors = {f"C{lvl}": getattr(features, f"c{lvl}") for lvl in BACKBONE_CHANNELS}
        meta = {"letterbox": letterbox.to_dict()} if letterbox is not None else {}
        write_container(path, tensors, meta)
