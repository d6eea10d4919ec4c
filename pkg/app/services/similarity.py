# ticketlab/app/services/similarity.py
# -*- coding: utf-8 -*-
"""
Output-space similarity between ticket networks on a shared probe set.

Probe outputs are post-softmax probabilities, rows = probe examples.
"""

from __future__ import annotations

import itertools
import math
from typing import Dict, List, Literal, Sequence

import numpy as np

Metric = Literal["l2", "cka"]


class SimilarityError(ValueError):
    pass


def _as_matrix(a: np.ndarray) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise SimilarityError(f"probe outputs must be 2-D with >= 2 rows, got {m.shape}")
    return m


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b||_F / sqrt(rows): root-mean-square row distance."""
    x, y = _as_matrix(a), _as_matrix(b)
    if x.shape != y.shape:
        raise SimilarityError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.linalg.norm(x - y) / math.sqrt(x.shape[0]))


def linear_cka(a: np.ndarray, b: np.ndarray) -> float:
    x, y = _as_matrix(a), _as_matrix(b)
    if x.shape[0] != y.shape[0]:
        raise SimilarityError(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    xx = np.linalg.norm(x.T @ x)
    yy = np.linalg.norm(y.T @ y)
    if xx == 0.0 or yy == 0.0:
        raise SimilarityError("linear CKA undefined for constant outputs")
    value = np.linalg.norm(y.T @ x) ** 2 / (xx * yy)
    return float(min(max(value, 0.0), 1.0))


_METRICS = {"l2": l2_distance, "cka": linear_cka}


def pairwise_similarity(records: Sequence, step: int = -1, metric: Metric = "l2") -> List[Dict[str, object]]:
    """
    Every unordered record pair, tagged 'within' (same seed and task) or
    'across'. Uses probe outputs stored at `step`.
    """
    fn = _METRICS.get(metric)
    if fn is None:
        raise SimilarityError(f"unknown metric '{metric}' (l2|cka)")
    rows: List[Dict[str, object]] = []
    for ra, rb in itertools.combinations(records, 2):
        group = "within" if (ra.seed, ra.task) == (rb.seed, rb.task) else "across"
        rows.append(
            {
                "metric": metric,
                "group": group,
                "step": step if step >= 0 else ra.steps + step,
                "task_a": ra.task, "seed_a": ra.seed, "run_a": ra.run_id,
                "task_b": rb.task, "seed_b": rb.seed, "run_b": rb.run_id,
                "value": fn(ra.probe_outputs[step], rb.probe_outputs[step]),
            }
        )
    return rows


def violin_summary(rows: Sequence[Dict[str, object]]) -> Dict[str, Dict[str, float]]:
    """min / quartiles / max / mean / count per group, for the violin plot."""
    groups: Dict[str, List[float]] = {}
    for r in rows:
        groups.setdefault(str(r["group"]), []).append(float(r["value"]))
    out: Dict[str, Dict[str, float]] = {}
    for group in sorted(groups):
        v = np.asarray(groups[group])
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        out[group] = {
            "count": int(v.size),
            "min": float(v.min()),
            "q1": float(q1),
            "median": float(med),
            "q3": float(q3),
            "max": float(v.max()),
            "mean": float(v.mean()),
        }
    return out
