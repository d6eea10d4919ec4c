# ticketlab/app/main.py
# -*- coding: utf-8 -*-
"""
Command line entry point.

  python -m app.main run      --seeds 0,1,2 --runs 3 --schedule 50,80,90 --regime free --out results/a
  python -m app.main compare  --runs-dir results/a --mode within --step 2 --level 0.95
  python -m app.main baseline --model shared --N 100 --n 50 --k 5
  python -m app.main report   --runs-dir results/a

Exit codes: 0 success, 1 usage or invalid plan, 2 data / parse / schema error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import orjson

from app.core.config import get_output_dir, get_schedule_preset, parse_int_list, parse_schedule, settings
from app.core.log import configure_logging
from app.models.dto import ExperimentPlan, OverlapStat
from app.nn.engine import EmptyDatasetError, TrainingDivergedError
from app.reports import overlap_report as reports
from app.services import experiment, mask_stats, similarity
from app.services.rng import RandomStream
from ingest.run_store import read_run_records
from parsers.base import ParseError, SchemaError

logger = logging.getLogger("app.main")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# =========================================================
# Argument parsing
# =========================================================
def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ticketlab", description="Lottery ticket laboratory")
    ap.add_argument("--log-level", default=None)
    ap.add_argument("--log-json", action="store_true", default=None)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train and prune seeds x runs")
    run.add_argument("--plan", type=Path, help="ExperimentPlan JSON; flags override its fields")
    run.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
    run.add_argument("--runs", type=int)
    run.add_argument("--schedule", help="percentages '50,60,80' or preset 'default' / 'deep'")
    run.add_argument("--regime", choices=["free", "partial", "full"])
    run.add_argument("--fixed-seed", type=int)
    run.add_argument("--partial-stream", choices=["shuffle", "noise"], help="stream the partial regime holds fixed")
    run.add_argument("--dataset", action="append", type=Path, help="DatasetSpec JSON (repeatable)")
    run.add_argument("--config", choices=["mlp", "lenet", "equal-size"], help="network preset")
    run.add_argument("--hidden", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--data-dir", type=Path)
    run.add_argument("--out", type=Path)

    cmp_ = sub.add_parser("compare", help="overlap / shared / rank / output comparisons")
    cmp_.add_argument("--runs-dir", type=Path, required=True)
    cmp_.add_argument(
        "--mode",
        choices=["within", "across", "cross-task", "shared-never", "spearman", "similarity"],
        default="within",
    )
    cmp_.add_argument("--step", type=int, default=-1, help="pruning step; -1 = last")
    cmp_.add_argument("--level", type=float, default=0.95)
    cmp_.add_argument("--task-a")
    cmp_.add_argument("--task-b")
    cmp_.add_argument("--pairing", choices=["same-seed", "cross-seed"], default="same-seed")
    cmp_.add_argument("--metric", choices=["l2", "cka"], default="l2")
    cmp_.add_argument("--out", type=Path, help="output directory (default <runs-dir>/reports)")

    base = sub.add_parser("baseline", help="analytic or Monte Carlo null-model values")
    base.add_argument("--model", choices=["hypergeom", "shared", "never", "mc"], required=True)
    base.add_argument("--N", type=int, required=True, help="layer size m*n")
    base.add_argument("--n", type=int, required=True, help="ticket size tau")
    base.add_argument("--k", type=int, default=settings.RUNS, help="mask count")
    base.add_argument("--level", type=float, default=0.95)
    base.add_argument("--trials", type=int, default=None)
    base.add_argument("--literal", action="store_true", help="never: previous-increment recursion")

    rep = sub.add_parser("report", help="standard report set for a runs directory")
    rep.add_argument("--runs-dir", type=Path, required=True)
    rep.add_argument("--out", type=Path)
    return ap


# =========================================================
# run
# =========================================================
def _plan_from_args(args: argparse.Namespace) -> ExperimentPlan:
    raw: Dict[str, Any] = {}
    if args.plan:
        if not args.plan.is_file():
            raise UsageError(f"plan file not found: {args.plan}")
        raw = orjson.loads(args.plan.read_bytes())

    if args.seeds:
        raw["seeds"] = parse_int_list(args.seeds)
    if args.runs is not None:
        raw["runs"] = args.runs
    if args.schedule:
        key = args.schedule.strip().lower()
        pct = get_schedule_preset(key) if key in ("default", "deep") else parse_schedule(args.schedule)
        raw["schedule"] = {"percentages": pct}
    if args.regime:
        raw["regime"] = args.regime
    if args.fixed_seed is not None:
        raw["fixed_seed"] = args.fixed_seed
    if args.partial_stream:
        raw["partial_stream"] = args.partial_stream
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.dataset:
        raw["datasets"] = [orjson.loads(p.read_bytes()) for p in args.dataset]

    network = dict(raw.get("network") or {})
    for flag, key in (("config", "preset"), ("hidden", "hidden"), ("epochs", "epochs"),
                      ("lr", "learning_rate"), ("batch_size", "batch_size")):
        value = getattr(args, flag)
        if value is not None:
            network[key] = value
    if network:
        raw["network"] = network
    return ExperimentPlan.model_validate(raw)


def cmd_run(args: argparse.Namespace) -> int:
    plan = _plan_from_args(args)
    out = args.out or get_output_dir()
    records = experiment.run_plan(plan, out_dir=out, data_dir=args.data_dir)
    curves = experiment.accuracy_curves(records)
    reports.emit_table(curves, out / "reports" / "accuracy.csv", sort_by=["task", "seed", "run", "step"])
    reports.emit_accuracy_svg(curves, out / "reports" / "accuracy.svg")
    print(orjson.dumps({"runs": len(records), "out": str(out), "plan": plan.summary()}).decode())
    return EXIT_OK


# =========================================================
# compare
# =========================================================
def _resolve_step(records: Sequence, step: int) -> int:
    steps = records[0].steps
    resolved = step if step >= 0 else steps + step
    if not 0 <= resolved < steps:
        raise UsageError(f"step {step} outside 0..{steps - 1}")
    return resolved


def _significance_summary(stats: Sequence[OverlapStat], level: float) -> List[Dict[str, Any]]:
    by_layer: Dict[str, List[OverlapStat]] = {}
    for s in stats:
        by_layer.setdefault(s.layer, []).append(s)
    out = []
    for layer, items in by_layer.items():
        N, tau = items[0].population, items[0].tau
        lo, hi = mask_stats.significance_interval(N, tau, level)
        out.append({
            "layer": layer,
            "N": N,
            "tau": tau,
            "pairs": len(items),
            "level": level,
            "interval": [lo, hi],
            "outside_mass": mask_stats.outside_mass(N, tau, level),
            "fraction_significant": mask_stats.significance_fraction(items, N, tau, level),
            "mean_pct": sum(s.pct_of_mask for s in items) / len(items),
        })
    return out


def run_compare(records: Sequence, mode: str, step: int, out: Path, **opts: Any) -> Dict[str, Any]:
    step = _resolve_step(records, step)
    level = opts.get("level", 0.95)
    tag = f"{mode}-step{step}"

    if mode in ("within", "across", "cross-task"):
        skipped: Sequence[str] = ()
        if mode == "within":
            stats = experiment.compare_within_seed(records, step)
        elif mode == "across":
            stats = experiment.compare_across_seeds(records, step)
        else:
            tasks = sorted({r.task for r in records})
            a = opts.get("task_a") or tasks[0]
            b = opts.get("task_b") or (tasks[1] if len(tasks) > 1 else tasks[0])
            result = experiment.compare_across_tasks(
                [r for r in records if r.task == a],
                [r for r in records if r.task == b],
                step,
                pairing=opts.get("pairing", "same-seed"),
            )
            stats, skipped = result.stats, result.skipped
        reports.emit_report(stats, None, out / f"{tag}.csv")
        reports.emit_svg(stats, None, out / f"{tag}.svg", title=f"{mode} overlap, step {step}")
        summary = {"mode": mode, "step": step, "stats": len(stats), "skipped_layers": list(skipped),
                   "layers": _significance_summary(stats, level)}
    elif mode == "shared-never":
        rows = experiment.shared_and_never_report(records, step)
        reports.emit_shared_never(rows, out / f"{tag}.csv")
        reports.emit_shared_never_svg(rows, out / f"{tag}.svg")
        summary = {"mode": mode, "step": step, "rows": len(rows)}
    elif mode == "spearman":
        rows = mask_stats.spearman_report(records, step)
        reports.emit_table(rows, out / f"{tag}.csv", sort_by=["task", "seed", "run", "layer"])
        summary = {"mode": mode, "step": step, "rows": len(rows)}
    else:
        metric = opts.get("metric", "l2")
        rows = similarity.pairwise_similarity(records, step, metric)
        reports.emit_table(rows, out / f"{tag}-{metric}.csv")
        summary = {"mode": mode, "step": step, "metric": metric, "violin": similarity.violin_summary(rows)}

    reports.emit_json(summary, out / f"{tag}.json")
    return summary


def cmd_compare(args: argparse.Namespace) -> int:
    records = read_run_records(args.runs_dir)
    out = args.out or args.runs_dir / "reports"
    summary = run_compare(
        records, args.mode, args.step, out,
        level=args.level, task_a=args.task_a, task_b=args.task_b, pairing=args.pairing, metric=args.metric,
    )
    print(orjson.dumps(summary, option=orjson.OPT_INDENT_2).decode())
    return EXIT_OK


# =========================================================
# baseline
# =========================================================
def cmd_baseline(args: argparse.Namespace) -> int:
    N, n, k = args.N, args.n, args.k
    if args.model == "hypergeom":
        est = mask_stats.hypergeom_moments(N, n)
        lo, hi = mask_stats.significance_interval(N, n, args.level)
        payload: Dict[str, Any] = {
            **est.model_dump(),
            "interval": [lo, hi],
            "level": args.level,
            "outside_mass": mask_stats.outside_mass(N, n, args.level),
        }
    elif args.model == "shared":
        est = mask_stats.shared_all_baseline(N, n, k)
        payload = {**est.model_dump(), "plot_sigma": est.normal_approx().sigma}
    elif args.model == "never":
        est = mask_stats.never_covered_baseline(N, n, k, literal=args.literal)
        payload = {**est.model_dump(), "plot_sigma": est.normal_approx().sigma}
    else:
        mc = mask_stats.monte_carlo_oracle(N, n, k, args.trials, RandomStream("cli-monte-carlo", N, n, k))
        payload = {name: est.model_dump() for name, est in mc.items()}
    print(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS).decode())
    return EXIT_OK


# =========================================================
# report
# =========================================================
def cmd_report(args: argparse.Namespace) -> int:
    records = read_run_records(args.runs_dir)
    out = args.out or args.runs_dir / "reports"
    curves = experiment.accuracy_curves(records)
    reports.emit_table(curves, out / "accuracy.csv", sort_by=["task", "seed", "run", "step"])
    reports.emit_accuracy_svg(curves, out / "accuracy.svg")

    runs_per_seed = max(len(g) for g in experiment.group_by_seed(records).values())
    seeds = {(r.task, r.seed) for r in records}
    modes = ["within", "shared-never"] if runs_per_seed >= 2 else []
    if len(seeds) > len({r.task for r in records}):
        modes.append("across")
    for step in range(records[0].steps):
        for mode in modes:
            run_compare(records, mode, step, out)
        run_compare(records, "spearman", step, out)
    logger.info("reports written to %s", out)
    print(orjson.dumps({"out": str(out), "steps": records[0].steps, "modes": modes}).decode())
    return EXIT_OK


# =========================================================
# Entry
# =========================================================
_COMMANDS = {"run": cmd_run, "compare": cmd_compare, "baseline": cmd_baseline, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, SchemaError, FileNotFoundError, orjson.JSONDecodeError, TrainingDivergedError,
            EmptyDatasetError, experiment.ComparisonError, mask_stats.StatsDomainError,
            similarity.SimilarityError) as e:
        print(f"ticketlab: {e}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as e:
        # pydantic ValidationError is a ValueError: bad flags or plan fields
        print(f"ticketlab: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
