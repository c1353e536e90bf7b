"""Differentiable primitives.

Every function takes Tensors (or array-likes, promoted to constants) and
returns a new Tensor; backward rules are closures handed to :func:`record`.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, record

__all__ = [
    "add", "sub", "mul", "matmul", "sum", "mean", "reshape", "transpose", "getitem",
    "einsum", "relu", "conv2d", "global_avg_pool", "dense_affine",
    "log_softmax", "cross_entropy", "ShapeError",
]


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    out = a.data + b.data
    return record("add", out, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    out = a.data - b.data
    return record("sub", out, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return record("mul", out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs (p,q)@(q,r), got {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return record("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record("sum", out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return record("transpose", out, (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return record("getitem", np.array(out), (a,), backward)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every operand index must appear in the other operand or the output."""
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)

    def backward(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return record("einsum", out, (a, b), backward)


def relu(v: Tensor) -> Tensor:
    mask = v.data > 0
    # np.maximum propagates NaN, so divergence is not silently clamped away
    out = np.maximum(v.data, 0).astype(v.dtype)
    return record("relu", out, (v,), lambda g: (g * mask,))


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    if h * w < 1:
        raise ValueError("global_avg_pool needs a non-empty spatial extent")
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return record("global_avg_pool", out, (x,), backward)


def dense_affine(v: Tensor, M: Tensor, bias: Tensor) -> Tensor:
    """``v @ M.T + bias`` for a batch of row vectors."""
    if v.ndim != 2 or M.ndim != 2 or v.shape[1] != M.shape[1]:
        raise ShapeError(f"dense_affine: input {v.shape} incompatible with weight {M.shape}")
    if bias.shape != (M.shape[0],):
        raise ShapeError(f"dense_affine: bias {bias.shape} must be ({M.shape[0]},)")
    out = v.data @ M.data.T + bias.data

    def backward(g):
        return g @ M.data, g.T @ v.data, g.sum(axis=0)

    return record("dense_affine", out, (v, M, bias), backward)


def log_softmax(z: Tensor) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return record("log_softmax", out, (z,),
                  lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    logp = log_softmax(logits)
    picked = getitem(logp, (np.arange(labels.size), labels))
    return mul(sum(picked), -1.0 / labels.size)


# --------------------------------------------------------------------------
# convolution

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def _col2im(cols: np.ndarray, padded_shape, stride: int) -> np.ndarray:
    n, c, kh, kw, oh, ow = cols.shape
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return xp


def conv2d(x: Tensor, W: Tensor, stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W) with ``W``.

    ``W`` is either a shared kernel (F, C/groups, kh, kw) or a stack of
    per-sample kernels (N, F, C/groups, kh, kw). Implemented as im2col plus a
    batched matrix product over (sample, group).
    """
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    if not isinstance(pad, (int, np.integer)) or pad < 0:
        raise ValueError(f"pad must be a non-negative integer, got {pad!r}")
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N,C,H,W), got {x.shape}")
    per_sample = W.ndim == 5
    if W.ndim not in (4, 5):
        raise ShapeError(f"conv2d kernel must be 4-D or per-sample 5-D, got {W.shape}")
    n, c, h, w = x.shape
    f, cg, kh, kw = W.shape[-4:]
    if per_sample and W.shape[0] != n:
        raise ShapeError(f"per-sample kernels for {W.shape[0]} samples but batch has {n}")
    if c % groups or f % groups:
        raise ShapeError(f"channels c={c}, f={f} not divisible by groups={groups}")
    if cg * groups != c:
        raise ShapeError(f"input has c={c} channels but kernel expects {cg * groups} (c/groups={cg})")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    K = cg * kh * kw
    L = oh * ow
    cols_g = cols.reshape(n, groups, K, L)
    if per_sample:
        Wm = W.data.reshape(n, groups, f // groups, K)
    else:
        Wm = W.data.reshape(groups, f // groups, K)
    out = np.matmul(Wm, cols_g).reshape(n, f, oh, ow)

    def backward(g):
        gm = g.reshape(n, groups, f // groups, L)
        gW = None
        if W.requires_grad:
            gWs = np.matmul(gm, cols_g.transpose(0, 1, 3, 2))
            gW = gWs.reshape(W.shape) if per_sample else gWs.sum(axis=0).reshape(W.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(np.swapaxes(Wm, -1, -2), gm)
            gxp = _col2im(gcols.reshape(n, c, kh, kw, oh, ow), xp.shape, stride)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gW

    return record("conv2d", out, (x, W), backward)


def standardize(x: Tensor, axes: tuple[int, ...], eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) with statistics taken over ``axes``."""
    axes = tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=axes, keepdims=True) + eps)
    out = centered * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * out).mean(axis=axes, keepdims=True)
        return ((g - gm - out * gxm) * inv,)

    return record("standardize", out.astype(x.dtype), (x,), backward)
