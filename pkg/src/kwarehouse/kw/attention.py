"""Attention module, attention functions and the temperature schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.tensor import Parameter, Tensor, as_tensor, record
from ..planner.plan import attention_hidden

log = logging.getLogger(__name__)

ATTENTION_FUNCTIONS = ("naf", "softmax", "sigmoid", "relu_norm")
DEGENERATE_EPS = 1e-12


def _abs_sum(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.abs(logits).sum(axis=-1, keepdims=True)
    ok = s >= DEGENERATE_EPS
    if not ok.all():
        log.debug("attention rows with sum|logits| < %g: %d", DEGENERATE_EPS, int((~ok).sum()))
    return np.where(ok, s, 1.0), ok


def linear_normalize(logits: Tensor) -> Tensor:
    """Each entry over its row's absolute sum (last axis); rows with a vanishing sum map to 0."""
    s, ok = _abs_sum(logits.data)
    out = np.where(ok, logits.data / s, 0.0).astype(logits.dtype)

    def backward(g):
        sign = np.sign(logits.data)
        inner = (g * out).sum(axis=-1, keepdims=True)
        gz = (g - sign * inner) / s
        return (np.where(ok, gz, 0.0).astype(logits.dtype),)

    return record("linear_normalize", out, (logits,), backward)


def relu_normalize(logits: Tensor) -> Tensor:
    """Positive part of each entry over its row's absolute sum."""
    s, ok = _abs_sum(logits.data)
    pos = logits.data > 0
    out = np.where(ok, np.where(pos, logits.data, 0.0) / s, 0.0).astype(logits.dtype)

    def backward(g):
        sign = np.sign(logits.data)
        inner = (g * out).sum(axis=-1, keepdims=True)
        gz = (g * pos - sign * inner) / s
        return (np.where(ok, gz, 0.0).astype(logits.dtype),)

    return record("relu_normalize", out, (logits,), backward)


def softmax(logits: Tensor) -> Tensor:
    e = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return record("softmax", out, (logits,),
                  lambda g: ((g - (g * out).sum(axis=-1, keepdims=True)) * out,))


def sigmoid(logits: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * logits.data))
    return record("sigmoid", out, (logits,), lambda g: (g * out * (1.0 - out),))


_NORMALIZERS = {
    "naf": linear_normalize,
    "relu_norm": relu_normalize,
    "softmax": softmax,
    "sigmoid": sigmoid,
}


def normalize_attention(logits: Tensor, tau: float, beta, fn: str = "naf") -> Tensor:
    """Blend normalized logits with the initialization table.

    ``alpha = (1 - tau) * normalize(logits) + tau * beta`` row by row over the
    last axis; ``beta`` broadcasts against ``logits``.
    """
    try:
        normalizer = _NORMALIZERS[fn]
    except KeyError:
        raise ValueError(f"unknown attention function {fn!r}; expected one of {ATTENTION_FUNCTIONS}") from None
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"temperature must lie in [0, 1], got {tau}")
    beta = np.asarray(beta, dtype=logits.dtype)
    if beta.shape[-1] != logits.shape[-1]:
        raise ops.ShapeError(f"beta width {beta.shape[-1]} != logit width {logits.shape[-1]}")
    normed = normalizer(logits)
    return ops.add(ops.mul(normed, 1.0 - tau), as_tensor(tau * beta, dtype=logits.dtype))


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear decay of tau from 1 to 0 over ``anneal_steps`` optimizer steps."""

    anneal_steps: int

    def __post_init__(self):
        if self.anneal_steps < 0:
            raise ValueError(f"anneal_steps must be non-negative, got {self.anneal_steps}")

    @classmethod
    def from_epochs(cls, epochs: float, steps_per_epoch: int) -> "TemperatureSchedule":
        return cls(int(round(epochs * steps_per_epoch)))

    def __call__(self, step: int) -> float:
        return temperature_at(self, step)


def temperature_at(schedule: TemperatureSchedule, step: int) -> float:
    if schedule.anneal_steps == 0:
        return 0.0
    return max(0.0, 1.0 - step / schedule.anneal_steps)


class AttentionModule:
    """GAP -> FC (c -> ceil(c/16)) -> ReLU -> FC -> m x n_cols logits."""

    def __init__(self, in_channels: int, m: int, n_cols: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "", reduction: int = 16):
        self.in_channels = in_channels
        self.m = m
        self.n_cols = n_cols
        self.hidden = attention_hidden(in_channels, reduction)
        h, out = self.hidden, m * n_cols
        bound1 = 1.0 / math.sqrt(in_channels)
        bound2 = 1.0 / math.sqrt(h)
        self.fc1_w = Parameter(rng.uniform(-bound1, bound1, (h, in_channels)), name=f"{name}/fc1_w", dtype=dtype)
        self.fc1_b = Parameter(rng.uniform(-bound1, bound1, h), name=f"{name}/fc1_b", dtype=dtype)
        self.fc2_w = Parameter(rng.uniform(-bound2, bound2, (out, h)), name=f"{name}/fc2_w", dtype=dtype)
        # non-zero so a dead hidden unit cannot leave every logit at exactly 0
        self.fc2_b = Parameter(rng.uniform(-bound2, bound2, out), name=f"{name}/fc2_b", dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ops.ShapeError(f"attention module expects {self.in_channels} input channels, got input {x.shape}")
        pooled = ops.global_avg_pool(x)
        hidden = ops.relu(ops.dense_affine(pooled, self.fc1_w, self.fc1_b))
        logits = ops.dense_affine(hidden, self.fc2_w, self.fc2_b)
        return ops.reshape(logits, (x.shape[0], self.m, self.n_cols))
