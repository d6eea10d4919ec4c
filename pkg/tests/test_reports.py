import xml.etree.ElementTree as ET

import orjson
import pandas as pd
import pytest

from app.reports.overlap_report import (
    OVERLAP_COLUMNS,
    emit_accuracy_svg,
    emit_json,
    emit_report,
    emit_shared_never,
    emit_shared_never_svg,
    emit_svg,
    emit_table,
    overlap_frame,
    Plot,
    render_overlap_svg,
    render_shared_never_svg,
)
from app.services.experiment import accuracy_curves, compare_within_seed, shared_and_never_report
from app.services.mask_stats import shared_all_baseline


@pytest.fixture
def stats(make_record):
    records = [make_record(s, r) for s in range(2) for r in range(3)]
    return compare_within_seed(records, 0)


def test_csv_has_one_row_per_stat(tmp_path, stats):
    path = emit_report(stats, None, tmp_path / "within.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == len(stats) + 1
    assert lines[0].split(",") == OVERLAP_COLUMNS
    df = pd.read_csv(path)
    assert df["baseline_mean"].iloc[0] == pytest.approx(100 * 100 / 400)


def test_reports_are_byte_stable(tmp_path, stats):
    a = emit_report(stats, None, tmp_path / "a.csv").read_bytes()
    b = emit_report(list(reversed(stats)), None, tmp_path / "b.csv").read_bytes()
    assert a == b
    s1 = emit_svg(stats, None, tmp_path / "a.svg").read_bytes()
    s2 = emit_svg(list(reversed(stats)), None, tmp_path / "b.svg").read_bytes()
    assert s1 == s2


def test_json_report(tmp_path, stats):
    rows = orjson.loads(emit_report(stats, None, tmp_path / "within.json").read_bytes())
    assert len(rows) == len(stats)
    assert set(rows[0]) == set(OVERLAP_COLUMNS)


def test_custom_baselines_are_used(stats):
    custom = {"dense1": shared_all_baseline(400, 100, 2)}
    df = overlap_frame(stats, custom)
    assert set(df.loc[df.layer == "dense1", "baseline_mean"]) == {25.0}


def test_svg_is_well_formed_with_points(stats):
    svg = render_overlap_svg(stats, title="within <seed>")
    root = ET.fromstring(svg.encode())
    circles = [el for el in root.iter() if el.tag.endswith("circle")]
    assert len(circles) == len(stats)
    assert "within &lt;seed&gt;" in svg
    assert "polyline" in svg


def test_empty_stats_give_an_empty_plot(tmp_path):
    path = emit_svg([], None, tmp_path / "empty.svg")
    root = ET.fromstring(path.read_bytes())
    assert "no data" in "".join(root.itertext())
    assert emit_report([], None, tmp_path / "empty.csv").read_text().strip() == ",".join(OVERLAP_COLUMNS)


def test_shared_never_and_tables(tmp_path, make_record):
    records = [make_record(0, r) for r in range(3)]
    path = emit_shared_never(shared_and_never_report(records, 0), tmp_path / "sn.csv")
    df = pd.read_csv(path)
    assert list(df["layer"]) == ["dense1", "dense2"]
    assert {"shared_baseline_mean", "never_baseline_sigma"} <= set(df.columns)

    curves = accuracy_curves(records)
    table = emit_table(list(reversed(curves)), tmp_path / "acc.csv", sort_by=["task", "seed", "run", "step"])
    assert pd.read_csv(table)["step"].tolist()[:2] == [-1, 0]
    svg = emit_accuracy_svg(curves, tmp_path / "acc.svg")
    ET.fromstring(svg.read_bytes())


def test_shared_never_svg_plots_both_metrics(tmp_path, make_record):
    records = [make_record(s, r) for s in range(2) for r in range(3)]
    rows = shared_and_never_report(records, 0)
    root = ET.fromstring(render_shared_never_svg(rows).encode())
    circles = [el for el in root.iter() if el.tag.endswith("circle")]
    assert len(circles) == 2 * len(rows) == 8
    assert sorted(c.get("class") for c in circles) == ["never"] * 4 + ["shared"] * 4
    never_ys = {c.get("cy") for c in circles if c.get("class") == "never"}
    assert never_ys == {f"{Plot().y(r.never_pct):.2f}" for r in rows}
    assert len([el for el in root.iter() if el.tag.endswith("rect")]) == 1 + 2 + 2 * 2  # background, legend, bands

    a = emit_shared_never_svg(rows, tmp_path / "a.svg").read_bytes()
    b = emit_shared_never_svg(list(reversed(rows)), tmp_path / "b.svg").read_bytes()
    assert a == b


def test_empty_shared_never_svg(tmp_path):
    root = ET.fromstring(emit_shared_never_svg([], tmp_path / "sn.svg").read_bytes())
    assert "no data" in "".join(root.itertext())


def test_emit_json_sorts_keys(tmp_path):
    path = emit_json({"b": 1, "a": [1, 2]}, tmp_path / "x.json")
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
