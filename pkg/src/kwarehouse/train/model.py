"""Sequential warehouse-convolution classifier built from an architecture spec."""
from __future__ import annotations

import math

import numpy as np

from ..core import ops
from ..core.tensor import Parameter, Tensor, as_tensor
from ..kw.layer import KWConvLayer, Warehouse
from ..planner.plan import WarehousePlan
from ..planner.spec import ArchSpec


NORM_MODES = ("running", "train", "batch")


class BatchNorm2d:
    """Per-channel batch normalization with running statistics for evaluation."""

    def __init__(self, channels: int, name: str, dtype=np.float64, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones((1, channels, 1, 1)), name=f"{name}/gamma", dtype=dtype)
        self.beta = Parameter(np.zeros((1, channels, 1, 1)), name=f"{name}/beta", dtype=dtype)
        self.running_mean = np.zeros((1, channels, 1, 1), dtype=dtype)
        self.running_var = np.ones((1, channels, 1, 1), dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}/running_mean": self.running_mean, f"{self.name}/running_var": self.running_var}

    def __call__(self, x: Tensor, batch_stats: bool, update: bool = True) -> Tensor:
        if not batch_stats:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            normed = ops.mul(ops.sub(x, as_tensor(self.running_mean, x.dtype)), as_tensor(inv, x.dtype))
        else:
            normed = ops.standardize(x, (0, 2, 3), self.eps)
        if batch_stats and update:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
            var = x.data.var(axis=(0, 2, 3), keepdims=True) * (n / max(n - 1, 1))
            self.running_mean *= 1 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1 - self.momentum
            self.running_var += self.momentum * var
        return ops.add(ops.mul(normed, self.gamma), self.beta)


class KWNet:
    """KW conv -> BN -> ReLU blocks in spec order, then GAP and a linear classifier."""

    def __init__(self, arch: ArchSpec, plan: WarehousePlan, num_classes: int, seed: int = 0,
                 attention_function: str = "naf", dtype=np.float64, use_beta: bool = True):
        self.arch = arch
        self.plan = plan
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        channels = int(arch.extra.get("input_channels", arch.layers[0].in_channels))
        self.input_channels = channels
        for layer in arch.layers:
            if layer.in_channels != channels:
                raise ValueError(
                    f"layer {layer.id!r} expects {layer.in_channels} input channels but receives {channels}; "
                    "only sequential specs can be instantiated")
            channels = layer.out_channels

        self.warehouses = {}
        for g in plan.groups:
            # He scaling against the widest kernel the cells are tiled into
            fan_in = max(p.kernel[1] * p.kernel[2] * p.kernel[3] for p in g.partitions.values())
            self.warehouses[g.name] = Warehouse.for_group(g, rng, self.dtype, fan_in=fan_in)
        self.layers = [
            KWConvLayer(spec, plan.group_of(spec.id), self.warehouses[spec.warehouse_group], rng,
                        attention_function, self.dtype, use_beta)
            for spec in arch.layers
        ]
        self.norms = [BatchNorm2d(spec.out_channels, f"norm/{spec.id}", self.dtype) for spec in arch.layers]
        bound = 1.0 / math.sqrt(channels)
        self.classifier_w = Parameter(rng.uniform(-bound, bound, (num_classes, channels)),
                                      name="classifier/w", dtype=self.dtype)
        self.classifier_b = Parameter(np.zeros(num_classes), name="classifier/b", dtype=self.dtype)

    def named_parameters(self) -> dict[str, Parameter]:
        params = {w.cells.name: w.cells for w in self.warehouses.values()}
        for layer, norm in zip(self.layers, self.norms):
            for p in layer.parameters() + norm.parameters():
                params[p.name] = p
        params[self.classifier_w.name] = self.classifier_w
        params[self.classifier_b.name] = self.classifier_b
        return params

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for norm in self.norms:
            out.update(norm.buffers())
        return out

    def forward(self, x: Tensor, tau: float, norm: str = "running", capture: dict | None = None,
                trace: dict | None = None) -> Tensor:
        """``norm`` picks the normalization statistics: ``"running"`` (evaluation),
        ``"train"`` (batch statistics, running averages updated) or ``"batch"``
        (batch statistics, running averages untouched)."""
        if norm not in NORM_MODES:
            raise ValueError(f"norm must be one of {NORM_MODES}, got {norm!r}")
        h = x
        for layer, bn in zip(self.layers, self.norms):
            h = ops.relu(bn(layer(h, tau, capture), norm != "running", norm == "train"))
            if trace is not None:
                trace[layer.id] = h.data
        pooled = ops.global_avg_pool(h)
        return ops.dense_affine(pooled, self.classifier_w, self.classifier_b)

    __call__ = forward

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters().items()}
        state.update(self.buffers())
        return state

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Strict load: names, shapes and dtypes must match exactly."""
        targets = {name: p.data for name, p in self.named_parameters().items()}
        targets.update(self.buffers())
        missing = sorted(set(targets) - set(arrays))
        unexpected = sorted(set(arrays) - set(targets))
        if missing or unexpected:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, t in targets.items():
            a = arrays[name]
            if a.shape != t.shape or a.dtype != t.dtype:
                raise ValueError(f"{name}: stored {a.shape}/{a.dtype} but model has {t.shape}/{t.dtype}")
        for name, t in targets.items():
            t[...] = arrays[name]
