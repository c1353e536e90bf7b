"""Central-difference gradient verification."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor, backprop_gradients


class GradCheckError(RuntimeError):
    pass


def _relative(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_diff_errors(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> list[float]:
    """Max relative error per parameter between tape gradients and central differences.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    With ``max_coords`` set, only that many coordinates per parameter are
    sampled (without replacement, seeded).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    with GradTape() as tape:
        loss = loss_fn()
    analytic = backprop_gradients(tape, loss, params)

    rng = np.random.default_rng(seed)
    errors = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        g = analytic[p].reshape(-1)
        worst = 0.0
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                label = p.name or f"param[{pi}]"
                raise GradCheckError(f"non-finite loss when perturbing {label} at flat index {int(k)}")
            numeric = (up - down) / (2 * eps)
            worst = max(worst, _relative(float(g[k]), numeric))
        errors.append(worst)
    return errors


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    errs = finite_diff_errors(loss_fn, params, eps=eps, max_coords=max_coords, seed=seed)
    return max(errs, default=0.0)
