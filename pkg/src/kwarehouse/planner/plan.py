"""Kernel partition, warehouse sizing and attention-initialization tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .spec import ArchSpec, LayerSpec, format_fraction

AXES = ("f", "c", "kh", "kw")
BETA_STRATEGIES = ("one_to_one", "all_to_one", "k_to_one", "none")


class PlanningError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionMap:
    layer_id: str
    kernel: tuple[int, int, int, int]
    cell_dims: tuple[int, int, int, int]
    grid: tuple[int, int, int, int]
    slots: tuple[tuple[int, tuple[int, int, int, int]], ...]

    @property
    def m(self) -> int:
        return len(self.slots)

    def block(self, slot: int) -> tuple[slice, slice, slice, slice]:
        offset = self.slots[slot][1]
        return tuple(slice(o, o + d) for o, d in zip(offset, self.cell_dims))


@dataclass(frozen=True)
class BetaTable:
    strategy: str
    matrix: np.ndarray  # (m_t, n_cols) of 0/1
    k: int = 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


@dataclass(frozen=True)
class GroupPlan:
    name: str
    cell_dims: tuple[int, int, int, int]
    layer_ids: tuple[str, ...]
    partitions: dict[str, PartitionMap]
    m_t: int
    n: int
    b: Fraction
    beta: BetaTable | None = None

    @property
    def has_zero_cell(self) -> bool:
        return self.n < self.m_t

    @property
    def n_cols(self) -> int:
        return self.n + (1 if self.has_zero_cell else 0)

    @property
    def m_per_layer(self) -> dict[str, int]:
        return {lid: self.partitions[lid].m for lid in self.layer_ids}

    def row_offset(self, layer_id: str) -> int:
        """First group-global mixture row belonging to ``layer_id``."""
        start = 0
        for lid in self.layer_ids:
            if lid == layer_id:
                return start
            start += self.partitions[lid].m
        raise KeyError(layer_id)

    def beta_rows(self, layer_id: str) -> np.ndarray:
        start = self.row_offset(layer_id)
        return self.beta.matrix[start:start + self.partitions[layer_id].m]


@dataclass(frozen=True)
class WarehousePlan:
    b: Fraction
    groups: tuple[GroupPlan, ...]
    policy_override: str | None = None

    def group(self, name: str) -> GroupPlan:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def group_of(self, layer_id: str) -> GroupPlan:
        for g in self.groups:
            if layer_id in g.partitions:
                return g
        raise KeyError(layer_id)


def _largest_divisor_at_most_half(v: int) -> int:
    if v == 1:
        return 1
    for d in range(v // 2, 0, -1):
        if v % d == 0:
            return d
    return 1


def derive_cell_dims(group_layers: list[LayerSpec], policy: str = "gcd") -> tuple[int, int, int, int]:
    """Common cell extent for a warehouse group.

    Channel axes take the greatest common divisor over the group; cells are
    always 1x1 spatially, so 3x3 and 1x1 kernels can share a warehouse.
    ``gcd_half`` further halves both channel axes.
    """
    if not group_layers:
        raise PlanningError("cannot derive cell dimensions for an empty group")
    f = math.gcd(*(l.kernel[0] for l in group_layers))
    c = math.gcd(*(l.kernel[1] for l in group_layers))
    if policy == "gcd":
        return (f, c, 1, 1)
    if policy == "gcd_half":
        return (_largest_divisor_at_most_half(f), _largest_divisor_at_most_half(c), 1, 1)
    raise PlanningError(f"unknown cell policy {policy!r}")


def partition_kernel(kernel_dims, cell_dims, layer_id: str = "") -> PartitionMap:
    kernel_dims = tuple(int(v) for v in kernel_dims)
    cell_dims = tuple(int(v) for v in cell_dims)
    grid = []
    for axis, k, c in zip(AXES, kernel_dims, cell_dims):
        if c < 1 or k % c:
            where = f" in layer {layer_id!r}" if layer_id else ""
            raise PlanningError(f"cell extent {c} does not divide kernel extent {k} along axis {axis}{where}")
        grid.append(k // c)
    slots = []
    for idx, pos in enumerate(product(*(range(g) for g in grid))):
        slots.append((idx, tuple(p * c for p, c in zip(pos, cell_dims))))
    return PartitionMap(layer_id, kernel_dims, cell_dims, tuple(grid), tuple(slots))


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def beta_table(m_t: int, n: int, strategy: str = "one_to_one", k: int = 1) -> BetaTable:
    zero = n < m_t
    cols = n + (1 if zero else 0)
    mat = np.zeros((m_t, cols), dtype=np.int8)
    if strategy == "one_to_one":
        for i in range(m_t):
            mat[i, i if i < n else n] = 1
    elif strategy == "all_to_one":
        mat[:, :n] = 1
    elif strategy == "k_to_one":
        if k < 1 or k * m_t > n:
            raise ValueError(f"k_to_one({k}) needs k*m_t <= n, got m_t={m_t}, n={n}")
        for i in range(m_t):
            mat[i, i * k:(i + 1) * k] = 1
    elif strategy == "none":
        pass
    else:
        raise ValueError(f"unknown beta strategy {strategy!r}")
    mat.setflags(write=False)
    return BetaTable(strategy, mat, k)


def plan_warehouses(
    arch: ArchSpec,
    b=None,
    policy: str | None = None,
    beta_strategy: str = "one_to_one",
    beta_k: int = 1,
) -> WarehousePlan:
    """Size every warehouse of ``arch`` for budget ``b``.

    ``policy`` overrides the per-group cell policy of every non-explicit group.
    """
    if b is None:
        b = arch.budget_b
    if b is None:
        raise PlanningError("no budget given and the architecture has no budget_b")
    b = Fraction(b)
    if b <= 0:
        raise PlanningError(f"budget must be positive, got {b}")
    if policy is not None and policy not in ("gcd", "gcd_half"):
        raise PlanningError(f"unknown cell policy override {policy!r}")

    groups = []
    for gspec in arch.groups:
        layers = arch.layers_in(gspec.name)
        if gspec.cell_policy == "explicit":
            cell = gspec.cell_dims
        else:
            cell = derive_cell_dims(layers, policy or gspec.cell_policy)
        parts = {l.id: partition_kernel(l.kernel, cell, l.id) for l in layers}
        m_t = sum(p.m for p in parts.values())
        n = round_half_up(b * m_t)
        if n < 1:
            raise PlanningError(f"group {gspec.name!r}: budget {b} gives n = 0 cells for m_t = {m_t}")
        beta = beta_table(m_t, n, beta_strategy, beta_k)
        groups.append(GroupPlan(gspec.name, tuple(cell), tuple(l.id for l in layers), parts, m_t, n, b, beta))
    return WarehousePlan(b, tuple(groups), policy)


def assign_beta(plan: WarehousePlan, strategy: str, k: int = 1) -> dict[str, BetaTable]:
    return {g.name: beta_table(g.m_t, g.n, strategy, k) for g in plan.groups}


def attention_hidden(c: int, reduction: int = 16) -> int:
    return max(math.ceil(c / reduction), 1)


@dataclass
class GroupParams:
    warehouse: int
    attention: int
    static: int

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.warehouse, self.static)


@dataclass
class ParamReport:
    groups: dict[str, GroupParams] = field(default_factory=dict)

    @property
    def warehouse(self) -> int:
        return sum(g.warehouse for g in self.groups.values())

    @property
    def attention(self) -> int:
        return sum(g.attention for g in self.groups.values())

    @property
    def static(self) -> int:
        return sum(g.static for g in self.groups.values())

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.warehouse, self.static)


def count_params(plan: WarehousePlan, arch: ArchSpec) -> ParamReport:
    report = ParamReport()
    for g in plan.groups:
        cell = math.prod(g.cell_dims)
        attn = 0
        static = 0
        for lid in g.layer_ids:
            layer = arch.layer(lid)
            c = layer.in_channels
            h = attention_hidden(c)
            m = g.partitions[lid].m
            attn += c * h + h + h * m * g.n_cols + m * g.n_cols
            static += math.prod(layer.kernel)
        report.groups[g.name] = GroupParams(g.n * cell, attn, static)
    return report


def plan_report(plan: WarehousePlan, arch: ArchSpec) -> dict:
    params = count_params(plan, arch)
    groups = []
    for g in plan.groups:
        p = params.groups[g.name]
        groups.append({
            "name": g.name,
            "cell_dims": list(g.cell_dims),
            "m_per_layer": g.m_per_layer,
            "m_t": g.m_t,
            "n": g.n,
            "has_zero_cell": g.has_zero_cell,
            "param_counts": {
                "warehouse": p.warehouse,
                "attention": p.attention,
                "static": p.static,
                "warehouse_to_static": float(p.ratio),
            },
        })
    return {
        "budget_b": format_fraction(plan.b),
        "policy_override": plan.policy_override,
        "groups": groups,
        "totals": {
            "warehouse": params.warehouse,
            "attention": params.attention,
            "static": params.static,
            "warehouse_to_static": float(params.ratio),
        },
    }
