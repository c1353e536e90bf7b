"""SGD with momentum and learning-rate schedules."""
from __future__ import annotations

import math

import numpy as np

from ..core.tensor import Parameter
from .config import OptimizerConfig


def lr_at(cfg: OptimizerConfig, step: int, total_steps: int, steps_per_epoch: int) -> float:
    if cfg.schedule == "cosine":
        if total_steps <= 0:
            return cfg.lr
        return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))
    if cfg.schedule == "step":
        epoch = step // max(steps_per_epoch, 1)
        return cfg.lr * cfg.gamma ** (epoch // cfg.step_epochs)
    return cfg.lr


class SGD:
    """v <- mu * v + (g + wd * p); p <- p - lr * v."""

    def __init__(self, params: dict[str, Parameter], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict, lr: float) -> None:
        for name, p in self.params.items():
            g = grads[p]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= (lr * v).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"optim/velocity/{name}": v for name, v in self.velocity.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, v in self.velocity.items():
            key = f"optim/velocity/{name}"
            if key not in arrays or arrays[key].shape != v.shape:
                raise ValueError(f"optimizer state missing or mis-shaped: {key}")
            v[...] = arrays[key]
