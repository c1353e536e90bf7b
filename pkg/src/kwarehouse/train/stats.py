"""Mean attention per (mixture slot, cell) over a dataset, exported as CSV."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core.tensor import Tensor
from .data import Dataset
from .loop import batches
from .model import KWNet


@dataclass
class AttentionStats:
    group: str
    mean_alpha: np.ndarray  # (m_t, n_cols)
    row_labels: list[str]
    col_labels: list[str]
    beta: np.ndarray

    def diagonal_agreement(self) -> float:
        """Fraction of rows with an assigned cell whose argmax |mean alpha| hits that cell."""
        hits = total = 0
        for i, row in enumerate(self.beta):
            if row.sum() != 1:
                continue
            total += 1
            hits += int(np.argmax(np.abs(self.mean_alpha[i])) == int(np.argmax(row)))
        return hits / total if total else float("nan")


def collect_attention_stats(model: KWNet, data: Dataset, tau: float = 0.0,
                            batch_size: int = 256) -> dict[str, AttentionStats]:
    if len(data) == 0:
        raise ValueError("attention statistics need a non-empty dataset")
    sums = {layer.id: np.zeros((layer.m, layer.warehouse.n_cols)) for layer in model.layers}
    images = data.images.astype(model.dtype)
    for idx in batches(len(data), batch_size):
        capture: dict = {}
        model(Tensor._wrap(images[idx]), tau, capture=capture)
        for lid, alpha in capture.items():
            sums[lid] += alpha.sum(axis=0)

    out = {}
    for g in model.plan.groups:
        rows, labels = [], []
        for lid in g.layer_ids:
            rows.append(sums[lid] / len(data))
            labels.extend(f"{lid}:{i}" for i in range(g.partitions[lid].m))
        cols = [f"e{j + 1}" for j in range(g.n)] + (["e_z"] if g.has_zero_cell else [])
        out[g.name] = AttentionStats(g.name, np.vstack(rows), labels, cols, np.asarray(g.beta.matrix))
    return out


def write_stats_csv(stats: dict[str, AttentionStats], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, s in stats.items():
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot"] + s.col_labels)
            for label, row in zip(s.row_labels, s.mean_alpha):
                w.writerow([label] + [f"{v:.9g}" for v in row])
        paths.append(path)
    return paths
