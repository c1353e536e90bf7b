"""Training configuration documents."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from ..kw.attention import ATTENTION_FUNCTIONS
from ..planner.plan import BETA_STRATEGIES
from ..planner.spec import ArchSpec, arch_from_dict, format_fraction, load_arch_spec, parse_budget

DTYPES = ("float32", "float64")


@dataclass
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"  # cosine | step | constant
    step_epochs: int = 30
    gamma: float = 0.1


@dataclass
class DatasetConfig:
    path: str = ""
    kind: str = "idx"
    split: str = "train"
    limit: int | None = None


@dataclass
class TrainConfig:
    arch: dict
    budget_b: str | None = None
    cell_policy: str | None = None
    attention_function: str = "naf"
    beta_strategy: str = "one_to_one"
    beta_k: int = 1
    finetune: bool = False
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 2
    batch_size: int = 32
    anneal_epochs: float = 1.0
    seed: int = 0
    num_classes: int = 10
    dtype: str = "float32"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def __post_init__(self):
        if self.attention_function not in ATTENTION_FUNCTIONS:
            raise ValueError(f"unknown attention_function {self.attention_function!r}")
        if self.beta_strategy not in BETA_STRATEGIES:
            raise ValueError(f"unknown beta_strategy {self.beta_strategy!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}")
        opt = self.optimizer
        for name in ("lr", "momentum", "weight_decay", "gamma"):
            v = getattr(opt, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"optimizer.{name} must be finite and non-negative, got {v}")
        if opt.schedule not in ("cosine", "step", "constant"):
            raise ValueError(f"unknown lr schedule {opt.schedule!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.anneal_epochs < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and anneal_epochs >= 0 required")
        if self.budget_b is not None:
            self.budget_b = format_fraction(parse_budget(self.budget_b))

    @property
    def arch_spec(self) -> ArchSpec:
        return arch_from_dict(self.arch)

    @property
    def budget(self) -> Fraction:
        if self.budget_b is not None:
            return parse_budget(self.budget_b)
        return self.arch_spec.budget_b or Fraction(1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> "TrainConfig":
        doc = dict(doc)
        for where, keys, known in (("config", doc, cls.__dataclass_fields__),
                                   ("optimizer", doc.get("optimizer", {}), OptimizerConfig.__dataclass_fields__),
                                   ("dataset", doc.get("dataset", {}), DatasetConfig.__dataclass_fields__)):
            unknown = sorted(set(keys) - set(known))
            if unknown:
                raise ValueError(f"unknown {where} keys: {', '.join(unknown)}")
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        arch = doc.get("arch")
        if isinstance(arch, str):
            candidate = base / arch
            arch = load_arch_spec(candidate if candidate.is_file() else arch).to_dict()
        elif not isinstance(arch, dict):
            raise ValueError("config needs 'arch': a spec path, bundled spec name, or inline spec object")
        doc["arch"] = arch
        doc["optimizer"] = OptimizerConfig(**doc.get("optimizer", {}))
        ds = dict(doc.get("dataset", {}))
        if ds.get("path") and not Path(ds["path"]).is_absolute():
            ds["path"] = str((base / ds["path"]).resolve())
        doc["dataset"] = DatasetConfig(**ds)
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)
