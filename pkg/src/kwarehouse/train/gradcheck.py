"""Finite-difference audit of every trainable parameter family of a small KW network."""
from __future__ import annotations

import numpy as np

from ..core import ops
from ..core.fdcheck import finite_diff_errors
from ..core.tensor import Tensor
from .config import TrainConfig
from .loop import build_model

TAUS = (0.0, 0.37, 1.0)
TOLERANCE = 1e-4
# large enough to keep cancellation error on ~1e-7 gradients under the tolerance,
# small enough not to step across ReLU kinks on the probe batch
STEP = 1e-5


def parameter_families(model) -> dict[str, list]:
    fam = {"warehouse_cells": [], "attention_weights": [], "attention_biases": [], "normalization": [],
           "classifier": []}
    for name, p in model.named_parameters().items():
        if name.startswith("warehouse/"):
            fam["warehouse_cells"].append(p)
        elif name.startswith("norm/"):
            fam["normalization"].append(p)
        elif name.endswith("_w") and "/attn/" in name:
            fam["attention_weights"].append(p)
        elif name.endswith("_b") and "/attn/" in name:
            fam["attention_biases"].append(p)
        else:
            fam["classifier"].append(p)
    return fam


def gradcheck(config: TrainConfig, taus=TAUS, batch: int = 3, size: int = 16, eps: float = STEP,
              max_coords: int = 24, seed: int = 0) -> dict:
    """Return ``{"results": {tau: {family: max_rel_err}}, "max_error", "passed"}`` in float64."""
    model = build_model(config, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(batch, model.input_channels, size, size)))
    labels = rng.integers(0, config.num_classes, size=batch)
    families = parameter_families(model)

    results = {}
    for tau in taus:
        def loss_fn(tau=tau):
            return ops.cross_entropy(model(x, tau, norm="batch"), labels)

        results[tau] = {}
        for fam, params in families.items():
            errs = finite_diff_errors(loss_fn, params, eps=eps, max_coords=max_coords, seed=seed)
            results[tau][fam] = max(errs, default=0.0)
    worst = max(v for r in results.values() for v in r.values())
    return {"results": results, "max_error": worst, "passed": worst <= TOLERANCE}
