"""Inference-only tensor kernels on ``float32`` arrays laid out ``(H, W, C)``.

Sums are accumulated in float64 and stored as float32.
"""

from __future__ import annotations

import numpy as np

from . import _kernels_numpy
from ._backend import kernels
from .errors import ShapeError


def _f32(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32))


def conv2d(x, weights, bias, stride: int = 1, padding: str = "same") -> np.ndarray:
    """2-D cross-correlation with ``weights`` of shape ``(k, k, C, C')``."""
    x, weights, bias = _f32(x), _f32(weights), _f32(bias)
    if x.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects HxWxC input and kxkxCxC' weights, got {x.shape}, {weights.shape}")
    kh, kw, cin, cout = weights.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kh}x{kw}")
    if cin != x.shape[2]:
        raise ShapeError(f"input has {x.shape[2]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    if padding == "same":
        pad = kh // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if kh == 1 and stride == 1:
        out = x.reshape(-1, cin).astype(np.float64) @ weights[0, 0].astype(np.float64) + bias
        return out.reshape(x.shape[0], x.shape[1], cout).astype(np.float32)
    # BLAS-bound: a numba loop measured about 3x slower, so both backends share this path
    return _kernels_numpy.conv2d(x, weights, bias, int(stride), pad)


def conv_transpose_2x2_s2(x, weights, bias) -> np.ndarray:
    """Stride-2 transposed convolution with 2×2 kernels ``(2, 2, C, C')``."""
    x, weights, bias = _f32(x), _f32(weights), _f32(bias)
    if weights.shape[:2] != (2, 2) or weights.shape[2] != x.shape[2]:
        raise ShapeError(f"weights {weights.shape} do not fit input {x.shape}")
    if bias.shape != (weights.shape[3],):
        raise ShapeError("bias length does not match output channels")
    h, w, _ = x.shape
    co = weights.shape[3]
    # stride equals kernel size, so output blocks do not overlap
    blocks = np.einsum("ijc,uvco->iujvo", x.astype(np.float64), weights.astype(np.float64))
    out = blocks.reshape(2 * h, 2 * w, co) + bias
    return out.astype(np.float32)


def dense(x, weights, bias) -> np.ndarray:
    """``x @ weights + bias`` with ``weights`` shaped ``(in, out)``; x may be batched."""
    x, weights, bias = np.asarray(x), np.asarray(weights), np.asarray(bias)
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    out = x.astype(np.float64) @ weights.astype(np.float64) + bias
    return out.astype(np.float32)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float32), np.float32(0))


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out.astype(np.float32)


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return (z / z.sum(axis=axis, keepdims=True)).astype(np.float32)


def batchnorm_inference(x, mean, var, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[-1]
    params = [np.asarray(p, dtype=np.float64) for p in (mean, var, gamma, beta)]
    if any(p.shape != (c,) for p in params):
        raise ShapeError(f"batchnorm parameters must have length {c}")
    mean, var, gamma, beta = params
    return ((x - mean) / np.sqrt(var + eps) * gamma + beta).astype(np.float32)


def global_avg_pool(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"global_avg_pool expects non-empty HxWxC, got {x.shape}")
    return x.reshape(-1, x.shape[2]).mean(axis=0).astype(np.float32)


def upsample2x_nearest(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def subsample2x(x) -> np.ndarray:
    """Top-left element of every 2×2 block; odd sizes round up."""
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32)[::2, ::2])


def bilinear_crop(x, box, out_size) -> np.ndarray:
    """Bilinear samples at the bin centres of a normalised ``(y1, x1, y2, x2)`` box.

    Normalised coordinate ``u`` maps to pixel-index coordinate ``u*H - 0.5`` so
    that a full-image box sampled at the input resolution reproduces ``x``.
    """
    x = _f32(x)
    if x.ndim != 3:
        raise ShapeError(f"bilinear_crop expects HxWxC, got {x.shape}")
    y1, x1, y2, x2 = (float(v) for v in box)
    if y2 < y1 or x2 < x1:
        raise ValueError(f"inverted box {box}")
    if np.isscalar(out_size):
        oh = ow = int(out_size)
    else:
        oh, ow = (int(v) for v in out_size)
    h, w, _ = x.shape
    ys = (y1 + (np.arange(oh) + 0.5) / oh * (y2 - y1)) * h - 0.5
    xs = (x1 + (np.arange(ow) + 0.5) / ow * (x2 - x1)) * w - 0.5
    return kernels().bilinear_sample(x, ys, xs)


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an HxWxC array."""
    return bilinear_crop(x, (0.0, 0.0, 1.0, 1.0), (out_h, out_w))
