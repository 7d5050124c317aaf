"""Differentiable primitives on channels-last tensors.

Images are laid out ``[B, H, W, C]``.  Each primitive computes its forward
value with numpy and attaches a closure returning one gradient per parent
(``None`` where the caller reported it is not needed).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, get_dtype

LN_EPS = 1e-5
LOG_FLOOR = 1e-12


def _im2col(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(xp, (3, 3), axis=(1, 2))  # B,H,W,C,3,3
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, 9 * c)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1.

    The forward sum is accumulated in float64 and rounded once to the
    working precision, so the result does not depend on the BLAS
    reduction order.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects [B,H,W,C] input, got {x.shape}")
    if kernel.data.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d expects a [3,3,Cin,Cout] kernel, got {kernel.shape}")
    b, h, w, cin = x.shape
    if kernel.shape[2] != cin:
        raise ShapeError(f"kernel expects {kernel.shape[2]} input channels, input has {cin}")
    cout = kernel.shape[3]
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")

    cols = _im2col(x.data)
    kmat = kernel.data.reshape(9 * cin, cout)
    out = cols.astype(np.float64) @ kmat.astype(np.float64) + bias.data.astype(np.float64)
    out = out.astype(get_dtype()).reshape(b, h, w, cout)

    def backward(g, need):
        g2 = g.reshape(-1, cout)
        gx = gk = gb = None
        if need[0]:
            gcols = (g2 @ kmat.T).reshape(b, h, w, 3, 3, cin)
            gxp = np.zeros((b, h + 2, w + 2, cin), dtype=g.dtype)
            for ky in range(3):
                for kx in range(3):
                    gxp[:, ky:ky + h, kx:kx + w, :] += gcols[:, :, :, ky, kx, :]
            gx = gxp[:, 1:-1, 1:-1, :]
        if need[1]:
            gk = (cols.T @ g2).reshape(3, 3, cin, cout)
        if need[2]:
            gb = g2.sum(axis=0)
        return gx, gk, gb

    return Tensor._from_op(out, (x, kernel, bias), backward, "conv2d")


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties send the gradient to the first element in row-major order."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2x2 expects [B,H,W,C], got {x.shape}")
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    blocks = x.data.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h2, w2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g, need):
        g4 = np.zeros((b, h2, w2, c, 4), dtype=g.dtype)
        np.put_along_axis(g4, idx[..., None], g[..., None], axis=-1)
        gx = g4.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "max_pool2x2")


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(g, need):
        return (g.reshape(shape),)

    return Tensor._from_op(x.data.reshape(shape[0], -1), (x,), backward, "flatten")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot multiply {x.shape} by {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data

    def backward(g, need):
        return (
            g @ wd.T if need[0] else None,
            xd.T @ g if need[1] else None,
            g.sum(axis=0) if need[2] else None,
        )

    return Tensor._from_op(out, (x, weight, bias), backward, "dense")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)

    def backward(g, need):
        return (g * mask,)

    return Tensor._from_op(out, (x,), backward, "relu")


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = LN_EPS) -> Tensor:
    """Standardize each row over the last axis, then apply ``gain * z + shift``."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: input {x.shape}, gain {gain.shape}, shift {shift.shape}")
    xd = x.data
    mean = xd.mean(axis=1, keepdims=True)
    centered = xd - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    z = centered * inv_std
    out = gain.data * z + shift.data

    def backward(g, need):
        gx = ggain = gshift = None
        if need[0]:
            gz = g * gain.data
            gx = inv_std * (gz - gz.mean(axis=1, keepdims=True) - z * (gz * z).mean(axis=1, keepdims=True))
        if need[1]:
            ggain = (g * z).sum(axis=0)
        if need[2]:
            gshift = g.sum(axis=0)
        return gx, ggain, gshift

    return Tensor._from_op(out, (x, gain, shift), backward, "layer_norm")


def softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax expects [B,K] with K >= 2, got {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g, need):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(p, (logits,), backward, "softmax")


def take(probs: Tensor, index) -> Tensor:
    """Pick ``probs[t, index[t]]`` for every row ``t``."""
    index = np.asarray(index, dtype=np.int64)
    if probs.data.ndim != 2 or index.shape != (probs.shape[0],):
        raise ShapeError(f"take: {probs.shape} rows vs {index.shape} indices")
    rows = np.arange(probs.shape[0])
    out = probs.data[rows, index]

    def backward(g, need):
        gp = np.zeros_like(probs.data)
        np.add.at(gp, (rows, index), g)
        return (gp,)

    return Tensor._from_op(out, (probs,), backward, "take")


def log(x: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log with the argument clamped below at ``floor``; zero gradient where clamped."""
    live = x.data > floor
    out = np.log(np.where(live, x.data, x.data.dtype.type(floor)))

    def backward(g, need):
        return (np.where(live, g / np.where(live, x.data, 1), 0).astype(g.dtype),)

    return Tensor._from_op(out, (x,), backward, "log")


def scale(x: Tensor, factors) -> Tensor:
    """Multiply elementwise by a constant (non-differentiated) array."""
    factors = np.asarray(factors, dtype=x.data.dtype)
    if factors.shape != x.shape:
        raise ShapeError(f"scale: factors {factors.shape} vs tensor {x.shape}")

    def backward(g, need):
        return (g * factors,)

    return Tensor._from_op(x.data * factors, (x,), backward, "scale")


def tsum(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(g, need):
        return (np.full(shape, g, dtype=g.dtype),)

    return Tensor._from_op(np.asarray(x.data.sum()), (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size

    def backward(g, need):
        return (np.full(shape, g / n, dtype=g.dtype),)

    return Tensor._from_op(np.asarray(x.data.sum() / n), (x,), backward, "mean")
