"""Training, evaluation and checkpoint plumbing."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ops
from ..core.tensor import GradTape, Tensor, backprop_gradients
from ..kw.attention import TemperatureSchedule
from ..planner.plan import plan_warehouses
from . import checkpoint
from .config import TrainConfig
from .data import Dataset, load_idx_dataset
from .model import KWNet
from .optim import SGD, lr_at

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.kwck"
METRICS_NAME = "metrics.jsonl"
SUMMARY_NAME = "summary.json"


class TrainingError(RuntimeError):
    pass


def build_model(config: TrainConfig, dtype=None) -> KWNet:
    arch = config.arch_spec
    plan = plan_warehouses(arch, config.budget, config.cell_policy, config.beta_strategy, config.beta_k)
    # without an initialization table there is nothing to blend towards
    use_beta = not config.finetune and config.beta_strategy != "none"
    return KWNet(arch, plan, config.num_classes, config.seed, config.attention_function,
                 dtype or np.dtype(config.dtype), use_beta=use_beta)


def load_dataset(config: TrainConfig) -> Dataset:
    ds = config.dataset
    if ds.kind != "idx":
        raise ValueError(f"unsupported dataset kind {ds.kind!r}")
    return load_idx_dataset(ds.path, ds.split, ds.limit).astype(np.dtype(config.dtype))


def batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def dataset_metrics(model: KWNet, data: Dataset, tau: float, batch_size: int = 256,
                    norm: str = "running") -> tuple[float, float]:
    """(mean cross-entropy, accuracy) over ``data`` with a fixed batch order.

    ``norm="batch"`` normalizes with each evaluation batch's own statistics and
    leaves the running averages untouched.
    """
    if norm == "train":
        raise ValueError("metrics must not update running statistics")
    if len(data) == 0:
        raise ValueError("empty dataset")
    total_loss = 0.0
    correct = 0
    for idx in batches(len(data), batch_size):
        logits = model(Tensor._wrap(data.images[idx]), tau, norm=norm)
        loss = ops.cross_entropy(logits, data.labels[idx])
        total_loss += loss.item() * len(idx)
        correct += int((logits.data.argmax(axis=1) == data.labels[idx]).sum())
    return total_loss / len(data), correct / len(data)


def model_meta(config: TrainConfig, **extra) -> dict:
    return {"config": config.to_dict(), **extra}


def save_checkpoint(path: str | Path, model: KWNet, config: TrainConfig, optimizer: SGD | None = None,
                    **extra) -> None:
    tensors = dict(model.state_arrays())
    for g in model.plan.groups:
        tensors[f"beta/{g.name}"] = np.asarray(g.beta.matrix)
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
    checkpoint.save(path, tensors, model_meta(config, **extra))


def restore(path: str | Path) -> tuple[KWNet, TrainConfig, dict, dict]:
    """Rebuild the model described by a checkpoint and load its weights strictly."""
    tensors, meta = checkpoint.load(path)
    try:
        config = TrainConfig.from_dict(meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"{path}: unusable config in manifest: {exc}") from exc
    model = build_model(config)
    params = {k: v for k, v in tensors.items() if not k.startswith(("optim/", "beta/"))}
    try:
        model.load_arrays(params)
    except ValueError as exc:
        raise checkpoint.CheckpointError(f"{path}: {exc}") from exc
    for g in model.plan.groups:
        stored = tensors.get(f"beta/{g.name}")
        if stored is None or not np.array_equal(stored, g.beta.matrix):
            raise checkpoint.CheckpointError(f"{path}: beta table for {g.name!r} does not match the plan")
    return model, config, tensors, meta


def load_into(path: str | Path, model: KWNet) -> None:
    """Load a checkpoint into an existing model; any mismatch is an error."""
    tensors, _ = checkpoint.load(path)
    params = {k: v for k, v in tensors.items() if not k.startswith(("optim/", "beta/"))}
    try:
        model.load_arrays(params)
    except ValueError as exc:
        raise checkpoint.CheckpointError(f"{path}: {exc}") from exc


@dataclass
class StepInfo:
    """What ``train`` hands to ``on_step`` before applying an update."""

    step: int
    tau: float
    batch: np.ndarray  # dataset indices of this step's samples
    loss: float
    alphas: dict[str, np.ndarray]  # layer id -> (batch, m, n_cols)


@dataclass
class TrainResult:
    records: list[dict] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    final_eval_loss: float = float("nan")
    final_eval_accuracy: float = float("nan")
    model: KWNet | None = None
    run_dir: Path | None = None


def _non_finite_layer(trace: dict) -> str:
    for lid, act in trace.items():
        if not np.all(np.isfinite(act)):
            return lid
    return "classifier"


def train(config: TrainConfig, run_dir: str | Path | None = None, data: Dataset | None = None,
          on_step=None) -> TrainResult:
    """Run SGD with temperature annealing; log one JSON record per epoch.

    ``on_step(info, model)`` is called with a :class:`StepInfo` before each
    optimizer step.
    """
    data = data if data is not None else load_dataset(config)
    model = build_model(config)
    params = model.named_parameters()
    opt = SGD(params, config.optimizer.momentum, config.optimizer.weight_decay)

    steps_per_epoch = math.ceil(len(data) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    schedule = TemperatureSchedule.from_epochs(config.anneal_epochs, steps_per_epoch)
    rng = np.random.default_rng([config.seed, 1])

    result = TrainResult(model=model)
    # both endpoints use batch statistics: the running averages are meaningless before training
    result.initial_loss, _ = dataset_metrics(model, data, schedule(0), norm="batch")
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        loss_sum = 0.0
        correct = 0
        lr = config.optimizer.lr
        for idx in batches(len(data), config.batch_size, order):
            tau = schedule(step)
            lr = lr_at(config.optimizer, step, total_steps, steps_per_epoch)
            trace: dict = {}
            alphas: dict = {}
            with GradTape() as tape:
                logits = model(Tensor._wrap(data.images[idx]), tau, norm="train", capture=alphas, trace=trace)
                loss = ops.cross_entropy(logits, data.labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step}; first non-finite output in "
                                    f"layer {_non_finite_layer(trace)!r}")
            grads = backprop_gradients(tape, loss, list(params.values()))
            if on_step is not None:
                on_step(StepInfo(step, tau, idx, value, alphas), model)
            opt.step(grads, lr)
            step += 1
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == data.labels[idx]).sum())
        record = {
            "epoch": epoch + 1,
            "step": step,
            "loss": loss_sum / len(data),
            "accuracy": correct / len(data),
            "tau": schedule(step),
            "lr": lr,
        }
        log.info("epoch %d loss %.4f acc %.3f tau %.3f", record["epoch"], record["loss"], record["accuracy"],
                 record["tau"])
        result.records.append(record)
    result.final_loss, _ = dataset_metrics(model, data, schedule(step), norm="batch")
    result.final_eval_loss, result.final_eval_accuracy = dataset_metrics(model, data, schedule(step))

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        result.run_dir = run_dir
        with open(run_dir / METRICS_NAME, "w", encoding="utf-8") as fh:
            for r in result.records:
                fh.write(json.dumps(r) + "\n")
        save_checkpoint(run_dir / CHECKPOINT_NAME, model, config, opt, step=step, tau=schedule(step))
        summary = {"initial_loss": result.initial_loss, "final_loss": result.final_loss,
                   "final_eval_loss": result.final_eval_loss,
                   "final_eval_accuracy": result.final_eval_accuracy,
                   "steps": step, "samples": len(data)}
        (run_dir / SUMMARY_NAME).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return result


def evaluate(ckpt: str | Path | KWNet, data: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, loss) at tau = 0."""
    model = ckpt if isinstance(ckpt, KWNet) else restore(ckpt)[0]
    data = data.astype(model.dtype)
    loss, acc = dataset_metrics(model, data, 0.0, batch_size)
    return acc, loss
