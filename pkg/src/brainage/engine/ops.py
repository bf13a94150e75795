"""Differentiable operations.

Layouts follow the channels-first convention: images are ``[N, C, *spatial]``
with one or more spatial axes (the models use two or three). Convolutions
are stride 1 with zero "same" padding and odd kernels; pooling is a 2-wide
window with stride 2.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..errors import BadProbability, EmptyBatch, ShapeMismatch
from .tensor import Tensor

__all__ = [
    "conv",
    "dense",
    "dropout",
    "global_avg_pool",
    "maxpool",
    "mse_loss",
    "relu",
    "reshape",
]


def _make(out, parents, backward):
    """Wrap ``out``; record the graph only if some parent needs a gradient."""
    if any(p.requires_grad for p in parents):
        return Tensor(out, requires_grad=True, parents=parents, backward=backward)
    return Tensor(out)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    src = x.shape
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(src),))


def _spatial_window(offset, extents):
    return (slice(None), slice(None)) + tuple(slice(o, o + s) for o, s in zip(offset, extents))


# upper bound on one gathered column block; larger problems are split by kernel offset
COLUMN_BUDGET_BYTES = 1 << 28


def _gather(xp, offsets, spatial, n, c, npos):
    cols = np.empty((n, c, len(offsets), npos), dtype=xp.dtype)
    for i, off in enumerate(offsets):
        cols[:, :, i, :] = xp[_spatial_window(off, spatial)].reshape(n, c, npos)
    return cols.reshape(n, c * len(offsets), npos)


def conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded, stride-1 convolution (cross-correlation).

    ``out[n, f, p] = bias[f] + sum_{c, d} x[n, c, p + d - k//2] * weight[f, c, d]``
    with zeros read outside the input. Computed as one matrix product over
    gathered columns (im2col); accumulation order is fixed, so results are
    reproducible bit for bit.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim < 3 or weight.ndim != x.ndim:
        raise ShapeMismatch(f"conv input {x.shape} and weight {weight.shape} ranks disagree")
    n, c = x.shape[:2]
    f, wc = weight.shape[:2]
    kernel = weight.shape[2:]
    if wc != c:
        raise ShapeMismatch(f"input has {c} channels, weight expects {wc}")
    if bias.shape != (f,):
        raise ShapeMismatch(f"bias shape {bias.shape}, expected ({f},)")
    if any(k % 2 == 0 for k in kernel):
        raise ShapeMismatch(f"kernel extents must be odd, got {kernel}")

    spatial = x.shape[2:]
    npos = math.prod(spatial)
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(k // 2, k // 2) for k in kernel])
    offsets = list(itertools.product(*(range(k) for k in kernel)))
    per_offset = max(1, n * c * npos * xp.itemsize)
    step = max(1, min(len(offsets), COLUMN_BUDGET_BYTES // per_offset))
    groups = [(i, min(i + step, len(offsets))) for i in range(0, len(offsets), step)]
    w3 = weight.data.reshape(f, c, len(offsets))

    out = None
    cached = None
    for i0, i1 in groups:
        cols = _gather(xp, offsets[i0:i1], spatial, n, c, npos)
        part = w3[:, :, i0:i1].reshape(f, -1) @ cols
        out = part if out is None else out + part
        if len(groups) == 1:
            cached = cols
    out += bias.data[None, :, None]
    out = out.astype(x.dtype, copy=False).reshape((n, f) + spatial)

    def backward(g):
        g = g.reshape(n, f, npos)
        gb = g.sum(axis=(0, 2)) if bias.requires_grad else None
        gw3 = np.zeros_like(w3) if weight.requires_grad else None
        # the input gradient sums f * prod(kernel) terms that routinely cancel,
        # so it is accumulated in float64 and rounded once at the end
        gxp = np.zeros(xp.shape, dtype=np.float64) if x.requires_grad else None
        g_wide = g.astype(np.float64, copy=False) if gxp is not None else None
        for i0, i1 in groups:
            cols = cached if cached is not None else _gather(xp, offsets[i0:i1], spatial, n, c, npos)
            if gw3 is not None:
                gw3[:, :, i0:i1] = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(f, c, i1 - i0)
            if gxp is not None:
                w_wide = w3[:, :, i0:i1].reshape(f, -1).T.astype(np.float64)
                gcols = (w_wide @ g_wide).reshape(n, c, i1 - i0, npos)
                for j, off in enumerate(offsets[i0:i1]):
                    gxp[_spatial_window(off, spatial)] += gcols[:, :, j, :].reshape((n, c) + spatial)
        gw = gw3.reshape(weight.shape) if gw3 is not None else None
        gx = None
        if gxp is not None:
            inner = tuple(slice(k // 2, k // 2 + s) for k, s in zip(kernel, spatial))
            gx = gxp[(slice(None), slice(None)) + inner].astype(x.dtype)
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward)


def maxpool(x: Tensor) -> Tensor:
    """2-wide, stride-2 max pooling over every spatial axis.

    Output extents are ``floor(extent / 2)``; a trailing odd row/column is
    dropped. Ties go to the lowest index inside the window.
    """
    x = _as_tensor(x)
    if x.ndim < 3:
        raise ShapeMismatch(f"maxpool needs [N, C, *spatial], got {x.shape}")
    n, c = x.shape[:2]
    spatial = x.shape[2:]
    rank = len(spatial)
    pooled = tuple(s // 2 for s in spatial)
    if any(p == 0 for p in pooled):
        raise ShapeMismatch(f"spatial extents {spatial} too small to pool")

    cropped = x.data[(slice(None), slice(None)) + tuple(slice(0, 2 * p) for p in pooled)]
    split = (n, c) + tuple(itertools.chain.from_iterable((p, 2) for p in pooled))
    # [N, C, p0, 2, p1, 2, ...] -> [N, C, p0, p1, ..., 2, 2, ...]
    perm = (0, 1) + tuple(2 + 2 * i for i in range(rank)) + tuple(3 + 2 * i for i in range(rank))
    windows = cropped.reshape(split).transpose(perm).reshape((n, c) + pooled + (2**rank,))
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(windows.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        inverse = np.argsort(perm)
        gc = gw.reshape((n, c) + pooled + (2,) * rank).transpose(inverse).reshape(cropped.shape)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[(slice(None), slice(None)) + tuple(slice(0, 2 * p) for p in pooled)] = gc
        return (gx,)

    return _make(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial axes: ``[N, C, *spatial] -> [N, C]``."""
    x = _as_tensor(x)
    if x.ndim < 3:
        raise ShapeMismatch(f"global_avg_pool needs [N, C, *spatial], got {x.shape}")
    axes = tuple(range(2, x.ndim))
    count = math.prod(x.shape[2:])
    out = x.data.mean(axis=axes)

    def backward(g):
        scaled = g / np.asarray(count, dtype=g.dtype)
        return (np.broadcast_to(scaled.reshape(g.shape + (1,) * len(axes)), x.shape).copy(),)

    return _make(out, (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape ``[N, D]`` and weight ``[D, U]``."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeMismatch(f"dense: bias {bias.shape} for {weight.shape[1]} units")
    out = x.data @ weight.data + bias.data

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity unless ``train`` is set and ``p > 0``."""
    if not 0 <= p < 1:
        raise BadProbability(f"dropout probability must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if not train or p == 0:
        return x
    if rng is None:
        raise BadProbability("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep * scale
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error as a 0-d tensor; ``pred`` may be ``[N]`` or ``[N, 1]``."""
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(-1)
    if pred.ndim == 2 and pred.shape[1] == 1:
        pred = reshape(pred, (pred.shape[0],))
    if pred.ndim != 1 or pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    n = pred.shape[0]
    if n == 0:
        raise EmptyBatch("mse_loss on an empty batch")
    diff = pred.data - target
    out = np.asarray(np.dot(diff, diff) / n, dtype=pred.dtype)

    def backward(g):
        return (diff * (2.0 * g / n),)

    return _make(out, (pred,), backward)
