"""Shared warehouses, kernel assembly and the warehouse-backed convolution layer."""
from __future__ import annotations

import math

import numpy as np

from ..core import ops
from ..core.tensor import Parameter, Tensor
from ..planner.plan import GroupPlan, PartitionMap
from ..planner.spec import LayerSpec
from .attention import ATTENTION_FUNCTIONS, AttentionModule, normalize_attention


class AssemblyError(ops.ShapeError):
    pass


class Warehouse:
    """n learnable cells of identical extent, stored as one (n, *cell_dims) parameter.

    The zero cell, when active, is not stored at all: it only widens the
    attention logits by one column, so it can never receive an update.
    """

    def __init__(self, name: str, n: int, cell_dims, zero_cell: bool, rng: np.random.Generator | None = None,
                 dtype=np.float64, cells: np.ndarray | None = None, fan_in: int | None = None):
        self.name = name
        self.cell_dims = tuple(int(v) for v in cell_dims)
        self.zero_cell_active = bool(zero_cell)
        self.shared_by: list[str] = []
        if cells is None:
            if fan_in is None:
                fan_in = self.cell_dims[1] * self.cell_dims[2] * self.cell_dims[3]
            std = math.sqrt(2.0 / fan_in)
            cells = rng.normal(0.0, std, (n,) + self.cell_dims)
        cells = np.asarray(cells)
        if cells.shape != (n,) + self.cell_dims:
            raise AssemblyError(f"warehouse {name!r}: cells shape {cells.shape} != {(n,) + self.cell_dims}")
        self.cells = Parameter(cells, name=f"warehouse/{name}/cells", dtype=dtype)

    @classmethod
    def for_group(cls, group: GroupPlan, rng, dtype=np.float64, fan_in: int | None = None) -> "Warehouse":
        return cls(group.name, group.n, group.cell_dims, group.has_zero_cell, rng, dtype, fan_in=fan_in)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.n + (1 if self.zero_cell_active else 0)

    def cell(self, j: int) -> np.ndarray:
        """Cell ``j`` (0-based); ``j == n`` addresses the zero cell."""
        if j == self.n and self.zero_cell_active:
            return np.zeros(self.cell_dims, dtype=self.cells.dtype)
        return self.cells.data[j]


def assemble_kernel(alpha: Tensor, warehouse: Warehouse, partition: PartitionMap) -> Tensor:
    """Mix warehouse cells per slot and tile the mixtures into full kernels.

    ``alpha`` is (m, n_cols) or batched (N, m, n_cols); the result is
    (f, c, kh, kw) or (N, f, c, kh, kw). Slots are laid out in the
    partition's lexicographic order, i.e. row-major over the block grid.
    """
    if alpha.ndim not in (2, 3):
        raise AssemblyError(f"alpha must be (m, n_cols) or (N, m, n_cols), got {alpha.shape}")
    m, cols = alpha.shape[-2:]
    if m != partition.m:
        raise AssemblyError(f"alpha has {m} rows but partition of {partition.layer_id!r} has {partition.m} slots")
    if cols != warehouse.n_cols:
        raise AssemblyError(f"alpha has {cols} columns but warehouse {warehouse.name!r} has {warehouse.n_cols}")
    if tuple(partition.cell_dims) != warehouse.cell_dims:
        raise AssemblyError(f"partition cells {partition.cell_dims} != warehouse cells {warehouse.cell_dims}")

    real = warehouse.n
    if warehouse.zero_cell_active:
        alpha = ops.getitem(alpha, (Ellipsis, slice(0, real)))
    batched = alpha.ndim == 3
    lead = (alpha.shape[0],) if batched else ()
    mixed = ops.einsum("Nmj,jabcd->Nmabcd" if batched else "mj,jabcd->mabcd", alpha, warehouse.cells)

    gf, gc, gh, gw = partition.grid
    fc, cc, kh, kw = partition.cell_dims
    mixed = ops.reshape(mixed, lead + (gf, gc, gh, gw, fc, cc, kh, kw))
    o = len(lead)
    perm = tuple(range(o)) + tuple(o + p for p in (0, 4, 1, 5, 2, 6, 3, 7))
    W = ops.transpose(mixed, perm)
    return ops.reshape(W, lead + tuple(partition.kernel))


class KWConvLayer:
    """A convolution whose kernel is assembled per sample from a shared warehouse."""

    def __init__(self, spec: LayerSpec, group: GroupPlan, warehouse: Warehouse, rng: np.random.Generator,
                 attention_function: str = "naf", dtype=np.float64, use_beta: bool = True):
        if attention_function not in ATTENTION_FUNCTIONS:
            raise ValueError(f"unknown attention function {attention_function!r}")
        self.spec = spec
        self.partition = group.partitions[spec.id]
        self.warehouse = warehouse
        self.attention_function = attention_function
        self.use_beta = use_beta
        if warehouse.n_cols != group.n_cols:
            raise AssemblyError(f"warehouse {warehouse.name!r} width {warehouse.n_cols} != plan {group.n_cols}")
        self.beta = np.array(group.beta_rows(spec.id), dtype=dtype)
        self.attention = AttentionModule(spec.in_channels, self.partition.m, warehouse.n_cols, rng,
                                         dtype=dtype, name=f"layer/{spec.id}/attn")
        warehouse.shared_by.append(spec.id)

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def m(self) -> int:
        return self.partition.m

    def parameters(self) -> list[Parameter]:
        return self.attention.parameters()

    def attention_logits(self, x: Tensor) -> Tensor:
        return self.attention.logits(x)

    def alphas(self, x: Tensor, tau: float) -> Tensor:
        logits = self.attention_logits(x)
        return normalize_attention(logits, tau if self.use_beta else 0.0, self.beta, self.attention_function)

    def forward(self, x: Tensor, tau: float, capture: dict | None = None) -> Tensor:
        alpha = self.alphas(x, tau)
        if capture is not None:
            capture[self.id] = alpha.data
        W = assemble_kernel(alpha, self.warehouse, self.partition)
        return ops.conv2d(x, W, self.spec.stride, self.spec.pad, self.spec.groups)

    __call__ = forward


def kw_forward(x: Tensor, layer: KWConvLayer, tau: float) -> Tensor:
    return layer.forward(x, tau)


def attention_logits(x: Tensor, layer: KWConvLayer) -> Tensor:
    return layer.attention_logits(x)
