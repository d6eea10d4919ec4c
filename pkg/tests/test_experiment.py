import dataclasses
import logging

import numpy as np
import orjson
import pytest

from app.models.dto import DatasetSpec, ExperimentPlan, NetworkSpec, PruneSchedule
from app.nn.params import Mask
from app.services.experiment import (
    ComparisonError,
    accuracy_curves,
    compare_across_seeds,
    compare_across_tasks,
    compare_within_seed,
    comparable_layers,
    group_by_seed,
    load_plan,
    plan_fingerprint,
    plan_jobs,
    run_plan,
    shared_and_never_report,
)
from ingest.run_store import read_run_records
from conftest import dense_chain


def _grid(make_record, seeds=5, runs=5, **kw):
    return [make_record(s, r, **kw) for s in range(seeds) for r in range(runs)]


# ----------------------------- bookkeeping -----------------------------

def test_within_seed_pair_counts(make_record):
    stats = compare_within_seed(_grid(make_record), 0)
    per_layer = [s for s in stats if s.layer == "dense1"]
    assert len(per_layer) == 50
    for seed in range(5):
        assert sum(s.seed_a == seed for s in per_layer) == 10
    assert all(s.seed_a == s.seed_b and s.run_a < s.run_b for s in stats)


def test_within_seed_two_runs_one_pair(make_record):
    stats = compare_within_seed(_grid(make_record, seeds=1, runs=2), 0)
    assert len(stats) == 2  # one pair, two layers


def test_within_seed_needs_two_runs(make_record):
    with pytest.raises(ComparisonError):
        compare_within_seed(_grid(make_record, seeds=2, runs=1), 0)
    with pytest.raises(ComparisonError):
        compare_within_seed([], 0)


def test_across_seed_pair_counts(make_record):
    stats = compare_across_seeds(_grid(make_record), 0)
    assert len([s for s in stats if s.layer == "dense2"]) == 250
    assert all(s.seed_a != s.seed_b for s in stats)


def test_across_seed_needs_two_seeds(make_record):
    with pytest.raises(ComparisonError):
        compare_across_seeds(_grid(make_record, seeds=1, runs=3), 0)


def test_random_masks_center_on_hypergeometric_mean(make_record):
    stats = compare_across_seeds(_grid(make_record), 0)
    pct = np.array([s.pct_of_mask for s in stats if s.layer == "dense1"])
    assert abs(pct.mean() - 100.0 * 100 / 400) < 2.0


def test_bad_step_is_a_comparison_error(make_record):
    with pytest.raises(ComparisonError):
        compare_within_seed(_grid(make_record, seeds=1, runs=2), 3)


# ----------------------------- cross-task -----------------------------

def test_cross_task_self_comparison_reduces_to_across_seeds(make_record):
    records = _grid(make_record, seeds=2, runs=2)
    result = compare_across_tasks(records, records, 0)
    assert len(result.stats) == len(compare_across_seeds(records, 0))
    assert result.skipped == ()


def test_cross_task_skips_unequal_layers(make_record, caplog):
    a = _grid(make_record, seeds=2, runs=2, task="fmnist")
    b = _grid(make_record, seeds=2, runs=2, task="mnist", cfg=dense_chain([30, 20, 4]))
    assert comparable_layers(a[0], b[0]) == (("dense2",), ("dense1",))
    with caplog.at_level(logging.WARNING):
        result = compare_across_tasks(a, b, 0)
    assert result.compared == ("dense2",) and result.skipped == ("dense1",)
    assert len(result.stats) == 8
    assert all(s.seed_a == s.seed_b and s.task_a == "fmnist" and s.task_b == "mnist" for s in result.stats)
    assert "skipping 1 layer" in caplog.text

    crossed = compare_across_tasks(a, b, 0, pairing="cross-seed")
    assert len(crossed.stats) == 8
    assert all(s.seed_a != s.seed_b for s in crossed.stats)


def test_cross_task_without_comparable_layers(make_record):
    a = _grid(make_record, seeds=1, runs=1, task="x")
    b = _grid(make_record, seeds=1, runs=1, task="y", cfg=dense_chain([30, 10, 4]))
    with pytest.raises(ComparisonError):
        compare_across_tasks(a, b, 0)
    with pytest.raises(ComparisonError):
        compare_across_tasks(a, [], 0)


# ----------------------------- shared / never -----------------------------

def test_identical_masks_share_everything(make_record):
    base = make_record(0, 0)
    records = [dataclasses.replace(base, run_id=r) for r in range(3)]
    rows = {r.layer: r for r in shared_and_never_report(records, 0)}
    assert rows["dense1"].shared_pct == 100.0
    assert rows["dense1"].never == 400 - 100
    assert rows["dense2"].never == 80 - 20
    assert rows["dense1"].masks == 3


def test_disjoint_masks_share_nothing(make_record):
    base = make_record(0, 0)
    records = []
    for r in range(4):
        bits = []
        for shape, tau in zip(base.masks[0].shapes, (100, 20)):
            flat = np.zeros(int(np.prod(shape)), dtype=bool)
            flat[r * tau:(r + 1) * tau] = True
            bits.append(flat.reshape(shape))
        records.append(dataclasses.replace(base, run_id=r, masks=(Mask.build(base.masks[0].names, bits),)))
    rows = shared_and_never_report(records, 0)
    assert all(r.shared == 0 and r.never_pct == 0.0 for r in rows)
    dense1 = next(r for r in rows if r.layer == "dense1")
    assert dense1.never == 0
    assert dense1.shared_baseline.model == "recursive-shared"
    assert dense1.never_baseline.mean == pytest.approx(400 * 0.75 ** 4)


def test_shared_never_skips_single_run_seeds(make_record, caplog):
    records = _grid(make_record, seeds=1, runs=2) + [make_record(7, 0)]
    rows = shared_and_never_report(records, 0)
    assert {r.seed for r in rows} == {0}
    with pytest.raises(ComparisonError):
        shared_and_never_report([make_record(0, 0)], 0)


def test_accuracy_curves(make_record):
    rows = accuracy_curves(_grid(make_record, seeds=1, runs=2, steps=3))
    assert len(rows) == 8
    assert rows[0]["step"] == -1 and rows[0]["pruned_pct"] == 0.0
    assert [r["pruned_pct"] for r in rows[1:4]] == [50.0, 60.0, 80.0]


def test_group_by_seed_orders_runs(make_record):
    groups = group_by_seed([make_record(1, 1), make_record(0, 0), make_record(1, 0)])
    assert list(groups) == [("task", 0), ("task", 1)]
    assert [r.run_id for r in groups[("task", 1)]] == [0, 1]


# ----------------------------- plans -----------------------------

def _tiny_plan(**kw):
    return ExperimentPlan(
        seeds=(0, 1),
        runs=2,
        network=NetworkSpec(preset="mlp", hidden=8, epochs=2, learning_rate=0.1, batch_size=16),
        schedule=PruneSchedule(percentages=(50.0, 80.0)),
        datasets=(DatasetSpec(name="blobs", classes=3, dims=6, train_per_class=20, test_per_class=10),),
        probe_size=8,
        **kw,
    )


def test_plan_jobs_cover_every_run():
    jobs = plan_jobs(_tiny_plan())
    assert [(j.seed, j.run_id) for j in jobs] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_load_plan_and_fingerprint(tmp_path):
    plan = _tiny_plan()
    p = tmp_path / "plan.json"
    p.write_bytes(orjson.dumps(plan.model_dump(mode="json")))
    loaded = load_plan(p)
    assert loaded == plan
    assert plan_fingerprint(loaded) == plan_fingerprint(plan)
    assert plan_fingerprint(_tiny_plan(regime="full")) != plan_fingerprint(plan)
    p.write_bytes(b"{")
    with pytest.raises(ValueError):
        load_plan(p)


def test_run_plan_records_and_persistence(tmp_path):
    plan = _tiny_plan()
    records = run_plan(plan, out_dir=tmp_path)
    assert len(records) == 4
    assert sum(r.steps for r in records) == 8
    hashes = {(r.seed, r.init_hash) for r in records}
    assert len(hashes) == 2
    assert len({h for _, h in hashes}) == 2

    index = orjson.loads((tmp_path / "plan.json").read_bytes())
    assert index["fingerprint"] == plan_fingerprint(plan)
    assert len(index["runs"]) == 4
    assert len(index["runs_digest"]) == 64
    back = read_run_records(tmp_path)
    assert all(a.equals(b) for a, b in zip(records, back))
    assert records[0].final_outputs.shape == (8, 3)


def test_run_plan_full_regime_gives_identical_masks():
    records = run_plan(_tiny_plan(regime="full", fixed_seed=3))
    for seed in (0, 1):
        a, b = [r for r in records if r.seed == seed]
        assert all(x.equals(y) for x, y in zip(a.masks, b.masks))
    stats = compare_within_seed(records, 1)
    assert all(s.pct_of_mask == 100.0 for s in stats)


def test_run_plan_in_process_pool_matches_serial():
    serial = run_plan(_tiny_plan())
    pooled = run_plan(_tiny_plan(workers=2))
    assert all(a.equals(b) for a, b in zip(serial, pooled))


def test_run_plan_partial_stream_selects_fixed_stream():
    records = run_plan(_tiny_plan(regime="partial", partial_stream="noise", fixed_seed=3))
    assert all(r.policy.noise.mode == "fixed" and r.policy.shuffle.mode == "free" for r in records)
    assert plan_fingerprint(_tiny_plan(regime="partial", partial_stream="noise")) != plan_fingerprint(
        _tiny_plan(regime="partial")
    )
