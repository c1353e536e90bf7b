"""Plain-numpy references: vanilla dynamic convolution and slot-by-slot tiling.

Nothing here touches the tape or the vectorised assembly path; these
functions exist to be compared against it.
"""
from __future__ import annotations

import numpy as np

from ..core.naive import conv2d_naive
from ..planner.plan import PartitionMap


def _normalize_row(logits: np.ndarray, fn: str) -> np.ndarray:
    if fn == "softmax":
        e = np.exp(logits - logits.max())
        return e / e.sum()
    if fn == "sigmoid":
        return 1.0 / (1.0 + np.exp(-logits))
    total = sum(abs(v) for v in logits)
    if total < 1e-12:
        return np.zeros_like(logits)
    if fn == "naf":
        return np.array([v / total for v in logits])
    if fn == "relu_norm":
        return np.array([max(v, 0.0) / total for v in logits])
    raise ValueError(fn)


def reference_dynamic_conv(x: np.ndarray, kernels: np.ndarray, fc1_w, fc1_b, fc2_w, fc2_b,
                           tau: float, beta, fn: str = "naf", stride: int = 1, pad: int = 0) -> np.ndarray:
    """Per sample, mix whole kernels with that sample's attention weights, then convolve."""
    count = kernels.shape[0]
    beta = np.asarray(beta, dtype=float)
    outs = []
    for xb in x:
        pooled = xb.mean(axis=(1, 2))
        hidden = np.maximum(fc1_w @ pooled + fc1_b, 0.0)
        logits = fc2_w @ hidden + fc2_b
        alpha = (1.0 - tau) * _normalize_row(logits, fn) + tau * beta
        W = np.zeros(kernels.shape[1:], dtype=kernels.dtype)
        for j in range(count):
            W = W + alpha[j] * kernels[j]
        outs.append(conv2d_naive(xb[None], W, stride, pad)[0])
    return np.stack(outs)


def tile_kernel(alpha: np.ndarray, cells: np.ndarray, partition: PartitionMap) -> np.ndarray:
    """Write sum_j alpha[i, j] * cells[j] into slot i's block, one slot at a time.

    Columns beyond ``len(cells)`` (the zero cell) are ignored.
    """
    W = np.zeros(partition.kernel, dtype=cells.dtype)
    for i, _offset in partition.slots:
        block = np.zeros(partition.cell_dims, dtype=cells.dtype)
        for j in range(cells.shape[0]):
            block = block + alpha[i, j] * cells[j]
        W[partition.block(i)] = block
    return W
