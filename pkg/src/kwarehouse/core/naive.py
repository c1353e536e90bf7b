"""Loop-level reference implementations used as test oracles.

Deliberately slow and written without any vectorisation so they share no
code path with :mod:`kwarehouse.core.ops`.
"""
from __future__ import annotations

import numpy as np


def conv2d_naive(x: np.ndarray, W: np.ndarray, stride: int = 1, pad: int = 0, groups: int = 1) -> np.ndarray:
    n, c, h, w = x.shape
    f, cg, kh, kw = W.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    fg = f // groups
    y = np.zeros((n, f, oh, ow), dtype=np.result_type(x, W))
    for b in range(n):
        for o in range(f):
            g = o // fg
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cg):
                        cin = g * cg + ci
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride + u - pad
                                s = j * stride + v - pad
                                if 0 <= r < h and 0 <= s < w:
                                    acc += x[b, cin, r, s] * W[o, ci, u, v]
                    y[b, o, i, j] = acc
    return y


def dense_affine_naive(v: np.ndarray, M: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, d = v.shape
    dout = M.shape[0]
    out = np.zeros((n, dout), dtype=np.result_type(v, M))
    for b in range(n):
        for o in range(dout):
            acc = bias[o]
            for k in range(d):
                acc += v[b, k] * M[o, k]
            out[b, o] = acc
    return out
