# ticketlab/app/services/mask_stats.py
# -*- coding: utf-8 -*-
"""
Statistics over tickets.

Features
--------
- hypergeometric overlap of two random tau-subsets of N weights: pmf, cdf,
  moments, conservative two-sided significance intervals and their exact
  outside mass
- pairwise overlap of two masks (OverlapStat per layer)
- recursive baselines for weights shared by all k masks and weights never
  covered by any of them, each with a 3-sigma max-variant
- Monte Carlo oracle over genuinely random masks
- Spearman rank correlation of |initial| vs |final| magnitudes on a ticket

Public API
----------
hypergeom_pmf, hypergeom_logpmf, hypergeom_pmf_vector, hypergeom_cdf,
hypergeom_moments, significance_interval, outside_mass, is_significant,
significance_fraction, overlap, shared_all_baseline, never_covered_baseline,
monte_carlo_oracle, random_mask_overlaps, spearman, spearman_report
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln
from scipy.stats import hypergeom, spearmanr

from app.core.config import settings
from app.models.dto import BaselineEstimate, OverlapStat
from app.nn.params import Mask
from app.services.rng import RandomStream

logger = logging.getLogger(__name__)

MC_CHUNK_ELEMENTS = 4_000_000


class StatsDomainError(ValueError):
    pass


def _check(N: int, tau: int, x: Optional[int] = None) -> None:
    if N < 1 or not 0 <= tau <= N:
        raise StatsDomainError(f"need 0 <= tau <= N and N >= 1 (N={N}, tau={tau})")
    if x is not None and not 0 <= x <= tau:
        raise StatsDomainError(f"need 0 <= x <= tau (x={x}, tau={tau})")


# ============================================================
# Hypergeometric overlap (draws = tau)
# ============================================================

def hypergeom_pmf(N: int, tau: int, x: int) -> float:
    """P(overlap = x) for two uniform tau-subsets of N. Exact integers up to EXACT_PMF_LIMIT."""
    _check(N, tau, x)
    if N <= settings.EXACT_PMF_LIMIT:
        return math.comb(tau, x) * math.comb(N - tau, tau - x) / math.comb(N, tau)
    return float(hypergeom.pmf(x, N, tau, tau))


def hypergeom_logpmf(N: int, tau: int, x: int) -> float:
    _check(N, tau, x)
    if tau - x > N - tau:
        return -math.inf

    def lncomb(a: int, b: int) -> float:
        return float(gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1))

    return lncomb(tau, x) + lncomb(N - tau, tau - x) - lncomb(N, tau)


@lru_cache(maxsize=256)
def _cached_pmf(N: int, tau: int, exact_limit: int) -> np.ndarray:
    if N <= exact_limit:
        total = math.comb(N, tau)
        vec = np.array([math.comb(tau, x) * math.comb(N - tau, tau - x) / total for x in range(tau + 1)])
    else:
        vec = hypergeom.pmf(np.arange(tau + 1), N, tau, tau)
    vec.setflags(write=False)
    return vec


def _pmf_vector(N: int, tau: int) -> np.ndarray:
    return _cached_pmf(N, tau, settings.EXACT_PMF_LIMIT)


def hypergeom_pmf_vector(N: int, tau: int) -> np.ndarray:
    """pmf over the full support 0..tau."""
    _check(N, tau)
    return _pmf_vector(N, tau)


def hypergeom_cdf(N: int, tau: int, x: int) -> float:
    _check(N, tau, x)
    return float(min(1.0, _pmf_vector(N, tau)[: x + 1].sum()))


def hypergeom_moments(N: int, tau: int) -> BaselineEstimate:
    _check(N, tau)
    if tau == 0:
        raise StatsDomainError("tau must be positive")
    if N < 2:
        raise StatsDomainError("variance needs N >= 2")
    mean = tau * (tau / N)
    var = tau * (tau / N) * ((N - tau) / N) * ((N - tau) / (N - 1))
    return BaselineEstimate(mean=mean, sigma=math.sqrt(var), model="hypergeometric")


# ----------------------------- Significance -----------------------------

_TAIL_EPS = 1e-12


@lru_cache(maxsize=1024)
def _interval(N: int, tau: int, level: float, exact_limit: int) -> Tuple[int, int]:
    alpha = (1.0 - level) / 2.0
    p = _cached_pmf(N, tau, exact_limit)
    below = np.concatenate(([0.0], np.cumsum(p)[:-1]))          # P(X < x)
    above = np.concatenate((np.cumsum(p[::-1])[::-1][1:], [0.0]))  # P(X > x)
    lo = int(np.flatnonzero(below <= alpha + _TAIL_EPS)[-1])
    hi = int(np.flatnonzero(above <= alpha + _TAIL_EPS)[0])
    return lo, hi


def significance_interval(N: int, tau: int, level: float = 0.95) -> Tuple[int, int]:
    """
    Central [lo, hi] with each excluded tail <= (1 - level) / 2. For narrow
    discrete distributions the excluded mass (see outside_mass) is below 1 - level.
    """
    _check(N, tau)
    if not 0.0 < level < 1.0:
        raise StatsDomainError(f"level {level} outside (0, 1)")
    return _interval(N, tau, float(level), settings.EXACT_PMF_LIMIT)


def outside_mass(N: int, tau: int, level: float = 0.95) -> float:
    lo, hi = significance_interval(N, tau, level)
    p = _pmf_vector(N, tau)
    return float(p[:lo].sum() + p[hi + 1:].sum())


def is_significant(x: int, N: int, tau: int, level: float = 0.95) -> bool:
    lo, hi = significance_interval(N, tau, level)
    return x < lo or x > hi


def significance_fraction(stats: Sequence[OverlapStat], N: int, tau: int, level: float = 0.95) -> float:
    if not stats:
        raise StatsDomainError("significance_fraction needs at least one observation")
    lo, hi = significance_interval(N, tau, level)
    flagged = sum(1 for s in stats if s.x < lo or s.x > hi)
    return flagged / len(stats)


# ============================================================
# Mask overlap
# ============================================================

def overlap(
    mask_a: Mask,
    mask_b: Mask,
    *,
    step: int = 0,
    seed_a: int = 0,
    run_a: int = 0,
    seed_b: int = 0,
    run_b: int = 1,
    task_a: str = "task",
    task_b: str = "task",
    layers: Optional[Sequence[str]] = None,
) -> List[OverlapStat]:
    """One OverlapStat per layer (or per named layer); x = popcount(a AND b)."""
    names = list(layers) if layers is not None else list(mask_a.names)
    out: List[OverlapStat] = []
    for name in names:
        try:
            a, b = mask_a.layer(name), mask_b.layer(name)
        except KeyError as e:
            raise StatsDomainError(str(e)) from None
        if a.shape != b.shape:
            raise StatsDomainError(f"{name}: shapes differ {a.shape} vs {b.shape}")
        ta, tb = int(np.count_nonzero(a)), int(np.count_nonzero(b))
        if ta != tb:
            raise StatsDomainError(f"{name}: ticket sizes differ {ta} vs {tb}")
        if ta == 0:
            raise StatsDomainError(f"{name}: empty ticket")
        x = int(np.count_nonzero(a & b))
        out.append(
            OverlapStat(
                layer=name,
                layer_index=mask_a.names.index(name),
                population=int(a.size),
                tau=ta,
                x=x,
                pct_of_mask=100.0 * x / ta,
                step=step,
                seed_a=seed_a,
                run_a=run_a,
                seed_b=seed_b,
                run_b=run_b,
                task_a=task_a,
                task_b=task_b,
            )
        )
    return out


# ============================================================
# Recursive baselines over k masks
# ============================================================

def _deviation(N: int, successes: float, draws: float) -> float:
    """Hypergeometric standard deviation of the overlap of `draws` with `successes` of N."""
    if N < 2:
        return 0.0
    var = draws * (successes / N) * ((N - successes) / N) * ((N - draws) / (N - 1))
    return math.sqrt(max(var, 0.0))


def _check_baseline(N: int, n: int, k: int, min_k: int) -> None:
    if N < 1 or not 0 < n <= N:
        raise StatsDomainError(f"need 0 < n <= N (N={N}, n={n})")
    if k < min_k:
        raise StatsDomainError(f"need k >= {min_k} masks (k={k})")


def shared_all_baseline(N: int, n: int, k: int) -> BaselineEstimate:
    """
    Expected count kept by all k random n-subsets: K_1 = n^2/N, K_i = n K_{i-1}/N,
    mean = K_{k-1}. The max-variant adds three deviations at every step.
    """
    _check_baseline(N, n, k, 2)
    K = n * n / N
    K_max = K + 3.0 * _deviation(N, n, n)
    for _ in range(2, k):
        K, K_max = n * K / N, n * K_max / N + 3.0 * _deviation(N, K_max, n)
    return BaselineEstimate(mean=K, sigma=0.5 * (K_max - K), model="recursive-shared", max_mean=K_max)


def never_covered_baseline(N: int, n: int, k: int, literal: bool = False) -> BaselineEstimate:
    """
    Expected count kept by none of k random n-subsets. Coverage grows as
    C_0 = n, K_i = n (1 - C_{i-1}/N), C_i = C_{i-1} + K_i; mean = N - C_{k-1}.
    `literal=True` uses K_i = n - n K_{i-1}/N on the previous increment instead,
    which can over-count coverage.
    """
    _check_baseline(N, n, k, 1)
    cover = cover_max = float(n)
    prev = float(n)
    for _ in range(1, k):
        if literal:
            prev = n - n * prev / N
            cover += prev
        else:
            cover += n * (1.0 - cover / N)
        gained_max = n * (1.0 - cover_max / N) + 3.0 * _deviation(N, cover_max, n)
        cover_max = min(float(N), cover_max + gained_max)
    mean = N - cover
    never_max = N - cover_max
    return BaselineEstimate(
        mean=mean,
        sigma=0.5 * abs(mean - never_max),
        model="recursive-never",
        max_mean=never_max,
    )


# ============================================================
# Monte Carlo
# ============================================================

def _random_masks(N: int, n: int, k: int, trials: int, stream: RandomStream) -> np.ndarray:
    """bool (trials, k, N): each row holds exactly n ones, uniform over subsets."""
    keys = stream.random((trials, k, N))
    idx = np.argpartition(keys, n - 1, axis=-1)[..., :n]
    masks = np.zeros((trials, k, N), dtype=bool)
    np.put_along_axis(masks, idx, True, axis=-1)
    return masks


def _chunks(trials: int, per_trial: int):
    size = max(1, MC_CHUNK_ELEMENTS // max(per_trial, 1))
    for start in range(0, trials, size):
        yield min(size, trials - start)


def _empirical(values: np.ndarray) -> BaselineEstimate:
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return BaselineEstimate(
        mean=float(values.mean()),
        sigma=std,
        model="monte-carlo",
        stderr=std / math.sqrt(values.size),
        trials=int(values.size),
    )


def monte_carlo_oracle(
    N: int,
    n: int,
    k: int,
    trials: Optional[int] = None,
    stream: Optional[RandomStream] = None,
) -> Dict[str, BaselineEstimate]:
    """
    Empirical 'pairwise' (masks 0 and 1), 'shared' (in all k) and 'never'
    (in none) counts over `trials` draws of k random n-subsets.
    """
    trials = settings.MC_TRIALS if trials is None else trials
    _check_baseline(N, n, k, 1)
    if trials < 1000:
        raise StatsDomainError(f"monte_carlo_oracle needs >= 1000 trials (got {trials})")
    stream = stream or RandomStream("monte-carlo", N, n, k)

    pairwise, shared, never = [], [], []
    for i, size in enumerate(_chunks(trials, k * N)):
        masks = _random_masks(N, n, k, size, stream.spawn(f"chunk-{i}"))
        if k >= 2:
            pairwise.append((masks[:, 0] & masks[:, 1]).sum(axis=-1))
        shared.append(masks.all(axis=1).sum(axis=-1))
        never.append((~masks.any(axis=1)).sum(axis=-1))

    out = {
        "shared": _empirical(np.concatenate(shared)),
        "never": _empirical(np.concatenate(never)),
    }
    if pairwise:
        out["pairwise"] = _empirical(np.concatenate(pairwise))
    return out


def random_mask_overlaps(N: int, tau: int, trials: int, stream: RandomStream) -> np.ndarray:
    """Overlap counts of `trials` independent pairs of random tau-subsets."""
    _check(N, tau)
    parts = [
        (m[:, 0] & m[:, 1]).sum(axis=-1)
        for m in (
            _random_masks(N, tau, 2, size, stream.spawn(f"chunk-{i}"))
            for i, size in enumerate(_chunks(trials, 2 * N))
        )
    ]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


# ============================================================
# Rank correlation
# ============================================================

def spearman(initial: np.ndarray, final: np.ndarray, mask: np.ndarray) -> float:
    """Spearman rho of |initial| vs |final| on the kept positions (average ranks for ties)."""
    if initial.shape != final.shape or initial.shape != mask.shape:
        raise StatsDomainError(f"shapes differ: {initial.shape}, {final.shape}, {mask.shape}")
    keep = mask.astype(bool)
    if np.count_nonzero(keep) < 2:
        raise StatsDomainError("spearman needs at least 2 kept weights")
    a, b = np.abs(initial[keep]), np.abs(final[keep])
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise StatsDomainError("spearman undefined for constant magnitudes")
    rho = spearmanr(a, b).statistic
    return float(np.clip(rho, -1.0, 1.0))


def spearman_report(records: Sequence, step: int) -> List[Dict[str, object]]:
    """One row per (record, layer): init-vs-trained magnitude correlation at `step`."""
    rows: List[Dict[str, object]] = []
    for rec in records:
        mask = rec.mask_at(step)
        trained = rec.trained[step]
        for i, name in enumerate(mask.names):
            bits = mask.bits[i]
            try:
                rho = spearman(rec.init_weights.kernels[i], trained.kernels[i], bits)
            except StatsDomainError as e:
                logger.warning("spearman skipped for %s seed=%d run=%d: %s", name, rec.seed, rec.run_id, e)
                rho = float("nan")
            rows.append(
                {
                    "task": rec.task,
                    "seed": rec.seed,
                    "run": rec.run_id,
                    "step": step,
                    "layer": name,
                    "tau": int(np.count_nonzero(bits)),
                    "rho": rho,
                }
            )
    return rows
