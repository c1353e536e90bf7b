"""Architecture spec documents: dataclasses and the JSON parser."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

KINDS = ("standard", "depthwise")
CELL_POLICIES = ("gcd", "gcd_half", "explicit")


class ArchSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kernel: tuple[int, int, int, int]  # (f, c, kh, kw)
    stride: int = 1
    pad: int = 0
    kind: str = "standard"
    warehouse_group: str = ""
    stage: str = ""

    @property
    def in_channels(self) -> int:
        return self.kernel[0] if self.kind == "depthwise" else self.kernel[1]

    @property
    def out_channels(self) -> int:
        return self.kernel[0]

    @property
    def groups(self) -> int:
        return self.kernel[0] if self.kind == "depthwise" else 1


@dataclass(frozen=True)
class GroupSpec:
    name: str
    cell_policy: str = "gcd"
    cell_dims: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple[LayerSpec, ...]
    groups: tuple[GroupSpec, ...]
    budget_b: Fraction | None = None
    name: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def group(self, name: str) -> GroupSpec:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def layers_in(self, group: str) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.warehouse_group == group]

    def layer(self, layer_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "layers": [
                {
                    "id": l.id, "kernel": list(l.kernel), "stride": l.stride, "pad": l.pad,
                    "kind": l.kind, "warehouse_group": l.warehouse_group, "stage": l.stage,
                }
                for l in self.layers
            ],
            "groups": [
                {"name": g.name, "cell_policy": g.cell_policy}
                | ({"cell_dims": list(g.cell_dims)} if g.cell_dims is not None else {})
                for g in self.groups
            ],
        }
        if self.budget_b is not None:
            doc["budget_b"] = format_fraction(self.budget_b)
        doc.update(self.extra)
        return doc


def parse_budget(value) -> Fraction:
    """Accept ``"p/q"`` strings, integers or decimal numbers."""
    if isinstance(value, bool):
        raise ArchSpecError(f"invalid budget {value!r}")
    try:
        if isinstance(value, float):
            b = Fraction(str(value))
        else:
            b = Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ArchSpecError(f"invalid budget {value!r}") from exc
    if b <= 0:
        raise ArchSpecError(f"budget must be positive, got {value!r}")
    return b


def format_fraction(b: Fraction) -> str:
    return str(b.numerator) if b.denominator == 1 else f"{b.numerator}/{b.denominator}"


def _positive_ints(value, what: str, n: int = 4) -> tuple[int, ...]:
    if not isinstance(value, list) or len(value) != n:
        raise ArchSpecError(f"{what} must be a list of {n} positive integers, got {value!r}")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ArchSpecError(f"{what} must be a list of {n} positive integers, got {value!r}")
    return tuple(value)


def parse_arch_spec(text: str) -> ArchSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchSpecError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return arch_from_dict(doc)


def arch_from_dict(doc: dict) -> ArchSpec:
    if not isinstance(doc, dict):
        raise ArchSpecError("top level of an architecture spec must be an object")
    for key in ("layers", "groups"):
        if not isinstance(doc.get(key), list):
            raise ArchSpecError(f"missing or non-list '{key}'")

    groups = []
    seen_groups = set()
    for i, g in enumerate(doc["groups"]):
        if not isinstance(g, dict) or not isinstance(g.get("name"), str) or not g["name"]:
            raise ArchSpecError(f"groups[{i}]: 'name' must be a non-empty string")
        name = g["name"]
        if name in seen_groups:
            raise ArchSpecError(f"duplicate group name {name!r}")
        seen_groups.add(name)
        policy = g.get("cell_policy", "gcd")
        if policy not in CELL_POLICIES:
            raise ArchSpecError(f"group {name!r}: unknown cell_policy {policy!r}")
        cell_dims = None
        if policy == "explicit":
            if "cell_dims" not in g:
                raise ArchSpecError(f"group {name!r}: explicit cell_policy requires cell_dims")
            cell_dims = _positive_ints(g["cell_dims"], f"group {name!r} cell_dims")
        elif "cell_dims" in g:
            raise ArchSpecError(f"group {name!r}: cell_dims only allowed with cell_policy 'explicit'")
        groups.append(GroupSpec(name, policy, cell_dims))

    layers = []
    seen_layers = set()
    for i, l in enumerate(doc["layers"]):
        if not isinstance(l, dict) or not isinstance(l.get("id"), str) or not l["id"]:
            raise ArchSpecError(f"layers[{i}]: 'id' must be a non-empty string")
        lid = l["id"]
        if lid in seen_layers:
            raise ArchSpecError(f"duplicate layer id {lid!r}")
        seen_layers.add(lid)
        kernel = _positive_ints(l.get("kernel"), f"layer {lid!r} kernel")
        kind = l.get("kind", "standard")
        if kind not in KINDS:
            raise ArchSpecError(f"layer {lid!r}: unknown kind {kind!r}")
        if kind == "depthwise" and kernel[1] != 1:
            raise ArchSpecError(f"layer {lid!r}: depthwise kernels must have c = 1, got {kernel}")
        stride = l.get("stride", 1)
        pad = l.get("pad", 0)
        if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
            raise ArchSpecError(f"layer {lid!r}: stride must be a positive integer")
        if isinstance(pad, bool) or not isinstance(pad, int) or pad < 0:
            raise ArchSpecError(f"layer {lid!r}: pad must be a non-negative integer")
        group = l.get("warehouse_group")
        if not isinstance(group, str):
            raise ArchSpecError(f"layer {lid!r}: missing warehouse_group")
        if group not in seen_groups:
            raise ArchSpecError(f"layer {lid!r} references unknown warehouse_group {group!r}")
        layers.append(LayerSpec(lid, kernel, stride, pad, kind, group, l.get("stage", group)))

    used = {l.warehouse_group for l in layers}
    for g in groups:
        if g.name not in used:
            raise ArchSpecError(f"group {g.name!r} has no layers")

    budget = parse_budget(doc["budget_b"]) if doc.get("budget_b") is not None else None
    known = {"layers", "groups", "budget_b", "name"}
    extra = {k: v for k, v in doc.items() if k not in known}
    return ArchSpec(tuple(layers), tuple(groups), budget, str(doc.get("name", "")), extra)


BUNDLED = ("resnet18", "tiny_kwnet")


def bundled_spec_text(name: str) -> str:
    if name not in BUNDLED:
        raise ArchSpecError(f"no bundled spec named {name!r}; available: {', '.join(BUNDLED)}")
    return resources.files("kwarehouse.specs").joinpath(f"{name}.json").read_text(encoding="utf-8")


def load_arch_spec(path_or_name: str | Path) -> ArchSpec:
    """Load a spec from a file path, falling back to a bundled spec name."""
    p = Path(path_or_name)
    if p.is_file():
        return parse_arch_spec(p.read_text(encoding="utf-8"))
    if str(path_or_name) in BUNDLED:
        return parse_arch_spec(bundled_spec_text(str(path_or_name)))
    raise ArchSpecError(f"architecture spec not found: {path_or_name}")
