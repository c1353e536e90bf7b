"""``kwctl``: plan warehouses, train, evaluate, export attention statistics, check gradients."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .planner.plan import plan_report, plan_warehouses
from .planner.spec import load_arch_spec, parse_budget
from .train.config import TrainConfig
from .train.data import load_idx_dataset
from .train.gradcheck import TOLERANCE, gradcheck
from .train.loop import evaluate, restore, train
from .train.stats import collect_attention_stats, write_stats_csv

log = logging.getLogger("kwctl")

EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2


def _thread_limit():
    raw = os.environ.get("KW_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"KW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"KW_THREADS must be a positive integer, got {raw!r}")
    return threadpool_limits(limits=n)


def cmd_plan(args) -> int:
    arch = load_arch_spec(args.spec)
    b = parse_budget(args.b) if args.b is not None else None
    plan = plan_warehouses(arch, b, args.policy, args.beta_strategy, args.beta_k)
    report = plan_report(plan, arch)
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    for g in report["groups"]:
        zero = " +e_z" if g["has_zero_cell"] else ""
        print(f"{g['name']}: cell {'x'.join(map(str, g['cell_dims']))}  m={g['m_t']}  n={g['n']}{zero}")
    totals = report["totals"]
    print(f"b={report['budget_b']}  warehouse params {totals['warehouse']}  "
          f"static params {totals['static']}  attention params {totals['attention']}")
    return 0


def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config)
    result = train(config, args.output)
    for r in result.records:
        print(json.dumps(r))
    print(f"initial loss {result.initial_loss:.6f}  final loss {result.final_loss:.6f}  -> {args.output}")
    return 0


def _dataset_for(args, model_dtype):
    return load_idx_dataset(args.data, args.split, args.limit).astype(model_dtype)


def cmd_eval(args) -> int:
    model = restore(args.ckpt)[0]
    acc, loss = evaluate(model, _dataset_for(args, model.dtype))
    print(json.dumps({"accuracy": acc, "loss": loss}))
    return 0


def cmd_attn_stats(args) -> int:
    model = restore(args.ckpt)[0]
    stats = collect_attention_stats(model, _dataset_for(args, model.dtype), tau=args.tau)
    paths = write_stats_csv(stats, args.output)
    for path, s in zip(paths, stats.values()):
        print(f"{path}: {len(s.row_labels)} slots x {len(s.col_labels)} cells, "
              f"argmax on assigned cell for {s.diagonal_agreement():.3f} of rows")
    return 0


def cmd_gradcheck(args) -> int:
    config = TrainConfig.from_file(args.config)
    report = gradcheck(config)
    for tau, fams in report["results"].items():
        for fam, err in fams.items():
            print(f"tau={tau:<5g} {fam:<18} max rel err {err:.3e}")
    verdict = "PASS" if report["passed"] else "FAIL"
    print(f"{verdict}: max relative error {report['max_error']:.3e} (tolerance {TOLERANCE:g})")
    return 0 if report["passed"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kwctl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan warehouses for an architecture spec")
    p.add_argument("spec", help="spec JSON path or bundled name (resnet18, tiny_kwnet)")
    p.add_argument("--b", help="budget as p/q or a number (default: the architecture file's budget_b)")
    p.add_argument("--policy", choices=("gcd", "gcd_half"), help="override the cell policy of every group")
    p.add_argument("--beta-strategy", default="one_to_one",
                   choices=("one_to_one", "all_to_one", "k_to_one", "none"))
    p.add_argument("--beta-k", type=int, default=1)
    p.add_argument("-o", "--output", help="write the plan JSON here")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("train", help="train from a config JSON")
    p.add_argument("--config", required=True)
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "accuracy and loss of a checkpoint at tau = 0"),
                                 ("attn-stats", cmd_attn_stats, "export mean attention per warehouse as CSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True, help="directory of IDX files")
        p.add_argument("--split", default="test", choices=("train", "test"))
        p.add_argument("--limit", type=int)
        if name == "attn-stats":
            p.add_argument("--tau", type=float, default=0.0)
            p.add_argument("-o", "--output", required=True, help="CSV directory")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every parameter family (64-bit)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"kwctl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
