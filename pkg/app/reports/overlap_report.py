# ticketlab/app/reports/overlap_report.py
# -*- coding: utf-8 -*-
"""
Report emission: CSV (pandas), JSON (orjson) and SVG (jinja2).

Every writer is a pure function of its input rows: rows are sorted before
writing, floats are printed with fixed precision, and SVG coordinates are
rounded to two decimals, so identical inputs give identical bytes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import orjson
import pandas as pd
from jinja2 import Environment, FileSystemLoader, select_autoescape

from app.models.dto import BaselineEstimate, OverlapStat, SharedNeverStat
from app.services.mask_stats import hypergeom_moments, is_significant

logger = logging.getLogger(__name__)

# ============================================================
# TEMPLATE ENGINE CONFIG
# ============================================================
TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"

env = Environment(
    loader=FileSystemLoader(str(TEMPLATES_DIR)),
    autoescape=select_autoescape(["svg.j2", "xml"]),
    keep_trailing_newline=True,
)

FLOAT_FORMAT = "%.6f"
OVERLAP_COLUMNS = [
    "layer", "pair", "x", "pct", "baseline_mean", "baseline_sigma", "significant_95", "significant_99",
]
PALETTE = ["#264653", "#2a9d8f", "#e9c46a", "#8338ec", "#e63946", "#457b9d", "#6a994e", "#bc6c25"]

PathLike = Union[str, Path]
Baselines = Optional[Mapping[str, BaselineEstimate]]


# ============================================================
# Tables
# ============================================================

def _baseline(stat: OverlapStat, baselines: Baselines) -> BaselineEstimate:
    if baselines and stat.layer in baselines:
        return baselines[stat.layer]
    return hypergeom_moments(stat.population, stat.tau)


def overlap_frame(stats: Sequence[OverlapStat], baselines: Baselines = None) -> pd.DataFrame:
    """One row per stat; baseline columns are counts, like x."""
    rows = []
    for s in sorted(stats, key=lambda s: (s.layer_index, s.pair_id, s.step)):
        b = _baseline(s, baselines)
        rows.append({
            "layer": s.layer,
            "pair": s.pair_id,
            "x": s.x,
            "pct": s.pct_of_mask,
            "baseline_mean": b.mean,
            "baseline_sigma": b.sigma,
            "significant_95": is_significant(s.x, s.population, s.tau, 0.95),
            "significant_99": is_significant(s.x, s.population, s.tau, 0.99),
        })
    return pd.DataFrame(rows, columns=OVERLAP_COLUMNS)


def _write_csv(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    return path


def emit_json(obj: Any, path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(orjson.dumps(obj, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY) + b"\n")
    return p


def emit_report(stats: Sequence[OverlapStat], baselines: Baselines, path: PathLike) -> Path:
    """'.json' writes a list of row objects; anything else writes CSV."""
    p = Path(path)
    df = overlap_frame(stats, baselines)
    if p.suffix.lower() == ".json":
        return emit_json(df.to_dict(orient="records"), p)
    return _write_csv(df, p)


def emit_table(rows: Sequence[Mapping[str, Any]], path: PathLike, sort_by: Optional[List[str]] = None) -> Path:
    """Generic CSV for accuracy, spearman and similarity rows."""
    df = pd.DataFrame(list(rows))
    if sort_by and not df.empty:
        df = df.sort_values(sort_by, kind="stable").reset_index(drop=True)
    return _write_csv(df, Path(path))


def shared_never_frame(stats: Sequence[SharedNeverStat]) -> pd.DataFrame:
    rows = []
    for s in sorted(stats, key=lambda s: (s.task, s.seed, s.layer_index)):
        rows.append({
            "task": s.task,
            "seed": s.seed,
            "layer": s.layer,
            "step": s.step,
            "N": s.population,
            "tau": s.tau,
            "masks": s.masks,
            "shared": s.shared,
            "shared_pct": s.shared_pct,
            "shared_baseline_mean": s.shared_baseline.mean,
            "shared_baseline_sigma": s.shared_baseline.sigma,
            "never": s.never,
            "never_pct": s.never_pct,
            "never_baseline_mean": s.never_baseline.mean,
            "never_baseline_sigma": s.never_baseline.sigma,
        })
    return pd.DataFrame(rows)


def emit_shared_never(stats: Sequence[SharedNeverStat], path: PathLike) -> Path:
    return _write_csv(shared_never_frame(stats), Path(path))


# ============================================================
# SVG
# ============================================================

@dataclass(frozen=True)
class Plot:
    width: int = 640
    height: int = 400
    left: int = 60
    right: int = 620
    top: int = 36
    bottom: int = 360

    def y(self, value: float, lo: float = 0.0, hi: float = 100.0) -> float:
        frac = 0.0 if hi == lo else (value - lo) / (hi - lo)
        return self.bottom - frac * (self.bottom - self.top)


def _c(v: float) -> str:
    return f"{v:.2f}"


def _y_ticks(plot: Plot, lo: float, hi: float, steps: int = 5, fmt: str = "{:.0f}") -> List[Dict[str, str]]:
    return [
        {"y": _c(plot.y(lo + (hi - lo) * i / steps, lo, hi)), "label": fmt.format(lo + (hi - lo) * i / steps)}
        for i in range(steps + 1)
    ]


def _columns(plot: Plot, labels: Sequence[str]) -> List[float]:
    span = plot.right - plot.left
    n = max(len(labels), 1)
    return [plot.left + span * (i + 0.5) / n for i in range(len(labels))]


def render_overlap_svg(stats: Sequence[OverlapStat], baselines: Baselines = None, title: str = "Ticket overlap") -> str:
    plot = Plot()
    layers = sorted({(s.layer_index, s.layer) for s in stats})
    names = [name for _, name in layers]
    xs = dict(zip(names, _columns(plot, names)))
    half = (plot.right - plot.left) / max(len(names), 1) * 0.35
    seeds = sorted({s.seed_a for s in stats} | {s.seed_b for s in stats})

    points = []
    per_layer: Dict[str, int] = {}
    for s in sorted(stats, key=lambda s: (s.layer_index, s.pair_id)):
        k = per_layer.get(s.layer, 0)
        per_layer[s.layer] = k + 1
        jitter = ((k * 7) % 21 - 10) / 10.0 * half
        points.append({
            "x": _c(xs[s.layer] + jitter),
            "y": _c(plot.y(s.pct_of_mask)),
            "color": PALETTE[seeds.index(s.seed_a) % len(PALETTE)],
            "opacity": "0.85" if (s.seed_a, s.task_a) == (s.seed_b, s.task_b) else "0.45",
        })

    bands, line = [], []
    for name in names:
        first = next(s for s in stats if s.layer == name)
        b = _baseline(first, baselines)
        mean = 100.0 * b.mean / first.tau
        radius = 100.0 * 2.0 * b.sigma / first.tau
        top, bottom = plot.y(min(100.0, mean + radius)), plot.y(max(0.0, mean - radius))
        bands.append({"x": _c(xs[name] - half), "y": _c(top), "w": _c(2 * half), "h": _c(bottom - top)})
        line.append(f"{_c(xs[name] - half)},{_c(plot.y(mean))} {_c(xs[name] + half)},{_c(plot.y(mean))}")

    return env.get_template("overlap_scatter.svg.j2").render(
        title=title,
        plot=plot,
        y_label="overlap (% of mask)",
        y_ticks=_y_ticks(plot, 0.0, 100.0),
        columns=[{"x": _c(xs[n]), "label": n} for n in names],
        points=points,
        bands=bands,
        baseline_path=" ".join(line),
    )


def emit_svg(stats: Sequence[OverlapStat], baselines: Baselines, path: PathLike, title: str = "Ticket overlap") -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(render_overlap_svg(stats, baselines, title), encoding="utf-8", newline="\n")
    return p


SHARED_NEVER_COLORS = {"shared": "#2a9d8f", "never": "#8338ec"}


def render_shared_never_svg(stats: Sequence[SharedNeverStat], title: str = "Shared by all / never kept") -> str:
    """
    Per layer: shared_pct points in the left half of the column, never_pct in
    the right half, each over its recursive baseline mean +- 2 sigma.
    """
    plot = Plot()
    names = [name for _, name in sorted({(s.layer_index, s.layer) for s in stats})]
    xs = dict(zip(names, _columns(plot, names)))
    quarter = (plot.right - plot.left) / max(len(names), 1) * 0.2

    points = []
    ordered = sorted(stats, key=lambda s: (s.layer_index, s.task, s.seed))
    for k, s in enumerate(ordered):
        jitter = ((k * 7) % 21 - 10) / 10.0 * quarter * 0.6
        for metric, value, offset in (("shared", s.shared_pct, -quarter), ("never", s.never_pct, quarter)):
            points.append({
                "metric": metric,
                "x": _c(xs[s.layer] + offset + jitter),
                "y": _c(plot.y(value)),
                "color": SHARED_NEVER_COLORS[metric],
            })

    bands = []
    for name in names:
        first = next(s for s in ordered if s.layer == name)
        shared_mean = 100.0 * first.shared_baseline.mean / first.tau
        shared_radius = 100.0 * 2.0 * first.shared_baseline.sigma / first.tau
        bound = min(first.population, first.masks * first.tau)  # never_pct is relative to the coverable area
        never_mean = 100.0 * (first.never_baseline.mean - (first.population - bound)) / bound
        never_radius = 100.0 * 2.0 * first.never_baseline.sigma / bound
        for metric, mean, radius, offset in (
            ("shared", shared_mean, shared_radius, -quarter),
            ("never", never_mean, never_radius, quarter),
        ):
            top, bottom = plot.y(min(100.0, mean + radius)), plot.y(max(0.0, mean - radius))
            left = xs[name] + offset - quarter * 0.8
            bands.append({
                "x": _c(left),
                "x2": _c(left + 1.6 * quarter),
                "y": _c(top),
                "w": _c(1.6 * quarter),
                "h": _c(bottom - top),
                "mean": _c(plot.y(min(100.0, max(0.0, mean)))),
                "color": SHARED_NEVER_COLORS[metric],
            })

    return env.get_template("shared_never.svg.j2").render(
        title=title,
        plot=plot,
        y_label="% of ticket / coverable area",
        y_ticks=_y_ticks(plot, 0.0, 100.0),
        columns=[{"x": _c(xs[n]), "label": n} for n in names],
        legend=[
            {"x": plot.left + 90 * i, "label": metric, "color": color}
            for i, (metric, color) in enumerate(SHARED_NEVER_COLORS.items())
        ],
        points=points,
        bands=bands,
    )


def emit_shared_never_svg(stats: Sequence[SharedNeverStat], path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(render_shared_never_svg(stats), encoding="utf-8", newline="\n")
    return p


def render_accuracy_svg(rows: Sequence[Mapping[str, Any]], title: str = "Accuracy per pruning step") -> str:
    plot = Plot()
    steps = sorted({int(r["step"]) for r in rows})
    labels = {int(r["step"]): f"{float(r['pruned_pct']):g}%" for r in rows}
    xs = dict(zip(steps, _columns(plot, [str(s) for s in steps])))
    accs = [float(r["accuracy"]) for r in rows]
    lo = min([0.0] + accs)
    hi = max([1.0] + accs)

    runs: Dict[tuple, List[Mapping[str, Any]]] = {}
    for r in rows:
        runs.setdefault((str(r["task"]), int(r["seed"]), int(r["run"])), []).append(r)
    seeds = sorted({key[1] for key in runs})

    curves = []
    for key in sorted(runs):
        pts = sorted(runs[key], key=lambda r: int(r["step"]))
        curves.append({
            "path": " ".join(f"{_c(xs[int(r['step'])])},{_c(plot.y(float(r['accuracy']), lo, hi))}" for r in pts),
            "color": PALETTE[seeds.index(key[1]) % len(PALETTE)],
            "opacity": "0.7",
        })

    return env.get_template("accuracy_curve.svg.j2").render(
        title=title,
        plot=plot,
        y_ticks=_y_ticks(plot, lo, hi, fmt="{:.2f}"),
        columns=[{"x": _c(xs[s]), "label": labels[s]} for s in steps],
        curves=curves,
    )


def emit_accuracy_svg(rows: Sequence[Mapping[str, Any]], path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(render_accuracy_svg(rows), encoding="utf-8", newline="\n")
    return p
