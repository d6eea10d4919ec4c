# ticketlab/app/services/experiment.py
# -*- coding: utf-8 -*-
"""
Experiment orchestration: seeds x runs x pruning steps, then comparisons.

Public API
----------
load_plan(path) / plan_fingerprint(plan)
run_plan(plan, out_dir=None) -> List[RunRecord]
compare_within_seed(records, step)            pairs of runs sharing a seed
compare_across_seeds(records, step)           pairs of runs from different seeds
compare_across_tasks(records_a, records_b, step, pairing)
shared_and_never_report(records, step)        all-k intersection / never-covered
accuracy_curves(records)
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import orjson

from app.models.dto import DatasetSpec, ExperimentPlan, OverlapStat, SharedNeverStat
from app.nn.engine import init_weights
from app.services.mask_stats import (
    StatsDomainError,
    never_covered_baseline,
    overlap,
    shared_all_baseline,
)
from app.services.pruning import RunRecord, iterative_lottery
from app.services.rng import regime_from_name
from app.utils.hashing import combine_hashes, file_sha256, stable_json_hash
from ingest.load_dataset import load_task
from ingest.run_store import dump_json, write_run_record
from parsers.base import Task

logger = logging.getLogger(__name__)

Pairing = Literal["same-seed", "cross-seed"]


class ComparisonError(ValueError):
    pass


# ----------------------------- Plans -----------------------------

def load_plan(path: Union[str, Path]) -> ExperimentPlan:
    p = Path(path)
    try:
        raw = orjson.loads(p.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ValueError(f"{p}: invalid JSON: {e}") from e
    return ExperimentPlan.model_validate(raw)


def plan_fingerprint(plan: ExperimentPlan) -> str:
    return stable_json_hash(plan.model_dump(mode="json"))


# ----------------------------- Running -----------------------------

@dataclass(frozen=True)
class RunJob:
    plan: ExperimentPlan
    dataset: DatasetSpec
    seed: int
    run_id: int
    data_dir: Optional[str] = None


@lru_cache(maxsize=8)
def _task(spec: DatasetSpec, data_dir: Optional[str]) -> Task:
    return load_task(spec, Path(data_dir) if data_dir else None)


def execute_job(job: RunJob) -> RunRecord:
    """One iterative pruning run; top-level so it pickles into worker processes."""
    task = _task(job.dataset, job.data_dir)
    config = job.plan.network.build(task.input_shape, task.class_count)
    policy = regime_from_name(
        job.plan.regime, job.seed, job.plan.fixed_seed, job.plan.entropy, job.plan.partial_stream
    )
    return iterative_lottery(
        config,
        init_weights(config, job.seed),
        task,
        job.plan.schedule,
        policy,
        job.run_id,
        probe_size=job.plan.probe_size,
    )


def plan_jobs(plan: ExperimentPlan, data_dir: Optional[Path] = None) -> List[RunJob]:
    d = str(data_dir) if data_dir else None
    return [
        RunJob(plan, ds, seed, run, d)
        for ds in plan.datasets
        for seed in plan.seeds
        for run in range(plan.runs)
    ]


def run_plan(
    plan: ExperimentPlan,
    out_dir: Optional[Path] = None,
    data_dir: Optional[Path] = None,
) -> List[RunRecord]:
    """
    Every (dataset, seed, run) triple once. Runs are independent, so with
    plan.workers > 1 they go to a process pool; results keep job order.
    """
    jobs = plan_jobs(plan, data_dir)
    fingerprint = plan_fingerprint(plan)
    logger.info("plan %s: %d jobs, %d workers", fingerprint[:12], len(jobs), plan.workers, extra=plan.summary())

    if plan.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            records = list(pool.map(execute_job, jobs))
    else:
        records = [execute_job(j) for j in jobs]

    if out_dir is not None:
        _persist(plan, fingerprint, records, Path(out_dir))
    return records


def _persist(plan: ExperimentPlan, fingerprint: str, records: Sequence[RunRecord], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    digests = []
    for rec in records:
        path = write_run_record(rec, out_dir, plan_fingerprint=fingerprint)
        digests.append(file_sha256(path))
        index.append({
            "task": rec.task,
            "seed": rec.seed,
            "run_id": rec.run_id,
            "init_hash": rec.init_hash,
            "manifest": path.relative_to(out_dir).as_posix(),
        })
    (out_dir / "plan.json").write_bytes(dump_json({
        "fingerprint": fingerprint,
        "plan": plan.model_dump(mode="json"),
        "runs": index,
        "runs_digest": combine_hashes(digests),
    }))
    logger.info("wrote %d run manifests to %s", len(records), out_dir)


# ----------------------------- Grouping -----------------------------

def group_by_seed(records: Iterable[RunRecord]) -> Dict[Tuple[str, int], List[RunRecord]]:
    groups: Dict[Tuple[str, int], List[RunRecord]] = {}
    for r in sorted(records, key=lambda r: (r.task, r.seed, r.run_id)):
        groups.setdefault((r.task, r.seed), []).append(r)
    return groups


def _pair(ra: RunRecord, rb: RunRecord, step: int, layers: Optional[Sequence[str]] = None) -> List[OverlapStat]:
    try:
        return overlap(
            ra.mask_at(step),
            rb.mask_at(step),
            step=step,
            seed_a=ra.seed, run_a=ra.run_id, task_a=ra.task,
            seed_b=rb.seed, run_b=rb.run_id, task_b=rb.task,
            layers=layers,
        )
    except (StatsDomainError, IndexError) as e:
        raise ComparisonError(f"cannot compare {ra.task}:s{ra.seed}r{ra.run_id} with {rb.task}:s{rb.seed}r{rb.run_id}: {e}") from e


# ----------------------------- Comparisons -----------------------------

def compare_within_seed(records: Sequence[RunRecord], step: int) -> List[OverlapStat]:
    """C(runs, 2) pairs per (task, seed), every layer."""
    groups = group_by_seed(records)
    if not groups:
        raise ComparisonError("no records to compare")
    stats: List[OverlapStat] = []
    for (task, seed), group in groups.items():
        if len(group) < 2:
            raise ComparisonError(f"{task} seed {seed}: within-seed comparison needs >= 2 runs, got {len(group)}")
        for ra, rb in itertools.combinations(group, 2):
            stats.extend(_pair(ra, rb, step))
    return stats


def compare_across_seeds(records: Sequence[RunRecord], step: int) -> List[OverlapStat]:
    """Every pair of runs from different seeds of the same task."""
    ordered = sorted(records, key=lambda r: (r.task, r.seed, r.run_id))
    if len({(r.task, r.seed) for r in ordered}) == len({r.task for r in ordered}):
        raise ComparisonError("across-seed comparison needs at least two seeds")
    stats: List[OverlapStat] = []
    for ra, rb in itertools.combinations(ordered, 2):
        if ra.task == rb.task and ra.seed != rb.seed:
            stats.extend(_pair(ra, rb, step))
    return stats


@dataclass(frozen=True)
class TaskComparison:
    stats: List[OverlapStat]
    compared: Tuple[str, ...]
    skipped: Tuple[str, ...]


def comparable_layers(a: RunRecord, b: RunRecord) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """(layers with equal name and shape, layers skipped) between two records."""
    shapes_b = dict(zip(b.init_weights.names, (k.shape for k in b.init_weights.kernels)))
    compared, skipped = [], []
    for name, kernel in zip(a.init_weights.names, a.init_weights.kernels):
        (compared if shapes_b.get(name) == kernel.shape else skipped).append(name)
    skipped += [n for n in b.init_weights.names if n not in a.init_weights.names]
    return tuple(compared), tuple(skipped)


def compare_across_tasks(
    records_a: Sequence[RunRecord],
    records_b: Sequence[RunRecord],
    step: int,
    pairing: Pairing = "same-seed",
) -> TaskComparison:
    """
    Tickets of task A vs task B on the layers both networks share in shape.
    'same-seed' pairs every run of seed s on A with every run of seed s on B;
    'cross-seed' pairs runs of different seeds. Comparing a task with itself
    reduces to compare_across_seeds.
    """
    if not records_a or not records_b:
        raise ComparisonError("cross-task comparison needs records on both sides")
    tasks_a, tasks_b = {r.task for r in records_a}, {r.task for r in records_b}
    if tasks_a == tasks_b:
        compared, _ = comparable_layers(records_a[0], records_a[0])
        return TaskComparison(compare_across_seeds(records_a, step), compared, ())

    compared, skipped = comparable_layers(records_a[0], records_b[0])
    if not compared:
        raise ComparisonError(f"no layers of equal shape between {sorted(tasks_a)} and {sorted(tasks_b)}")
    if skipped:
        logger.warning("cross-task: skipping %d layer(s) of unequal shape: %s", len(skipped), ", ".join(skipped))

    stats: List[OverlapStat] = []
    for ra in sorted(records_a, key=lambda r: (r.seed, r.run_id)):
        for rb in sorted(records_b, key=lambda r: (r.seed, r.run_id)):
            same = ra.seed == rb.seed
            if same == (pairing == "same-seed"):
                stats.extend(_pair(ra, rb, step, layers=compared))
    if not stats:
        raise ComparisonError(f"no {pairing} record pairs between the two tasks")
    return TaskComparison(stats, compared, skipped)


def shared_and_never_report(records: Sequence[RunRecord], step: int) -> List[SharedNeverStat]:
    """
    Per (task, seed, layer): weights kept by all k runs (percent of tau) and
    weights kept by none (count, and percent of the coverable bound min(N, k*tau)).
    """
    out: List[SharedNeverStat] = []
    for (task, seed), group in group_by_seed(records).items():
        k = len(group)
        if k < 2:
            logger.warning("%s seed %d: shared/never report needs >= 2 runs, skipping", task, seed)
            continue
        masks = [r.mask_at(step) for r in group]
        for li, name in enumerate(masks[0].names):
            stack = np.stack([m.layer(name).ravel() for m in masks])
            N = stack.shape[1]
            taus = stack.sum(axis=1)
            if len(set(taus.tolist())) != 1:
                raise ComparisonError(f"{task} seed {seed} {name}: ticket sizes differ across runs")
            tau = int(taus[0])
            shared = int(stack.all(axis=0).sum())
            covered = int(stack.any(axis=0).sum())
            bound = min(N, k * tau)
            out.append(SharedNeverStat(
                layer=name,
                layer_index=li,
                task=task,
                seed=seed,
                step=step,
                population=N,
                tau=tau,
                masks=k,
                shared=shared,
                shared_pct=100.0 * shared / tau,
                never=N - covered,
                never_pct=100.0 * (bound - covered) / bound,
                shared_baseline=shared_all_baseline(N, tau, k),
                never_baseline=never_covered_baseline(N, tau, k),
            ))
    if not out:
        raise ComparisonError("no seed has at least two runs")
    return out


def accuracy_curves(records: Sequence[RunRecord]) -> List[Dict[str, object]]:
    """Dense accuracy (step -1, 0% pruned) followed by every pruning step."""
    rows: List[Dict[str, object]] = []
    for r in sorted(records, key=lambda r: (r.task, r.seed, r.run_id)):
        rows.append({"task": r.task, "seed": r.seed, "run": r.run_id, "step": -1, "pruned_pct": 0.0, "accuracy": r.dense_accuracy})
        for k, acc in enumerate(r.accuracies):
            rows.append({
                "task": r.task, "seed": r.seed, "run": r.run_id,
                "step": k, "pruned_pct": r.schedule.percentages[k], "accuracy": acc,
            })
    return rows
