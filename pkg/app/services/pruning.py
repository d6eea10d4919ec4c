# ticketlab/app/services/pruning.py
# -*- coding: utf-8 -*-
"""
Large-final magnitude pruning and the iterative train -> prune -> reset loop.

Percentages are cumulative and applied per layer: at step k a layer of N
weights keeps ceil(keep_k * N) of them, chosen among the survivors of step
k-1 by largest |final weight|, ties to the lowest flat index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.models.dto import NetworkConfig, PruneSchedule, SeedPolicy
from app.nn.engine import predict_proba, train
from app.nn.params import Mask, Weights
from app.services.rng import derive_stream
from parsers.base import Task

logger = logging.getLogger(__name__)

KeepFraction = Union[float, Mapping[str, float]]

_ROUND_GUARD = 1e-9


class PruningError(ValueError):
    pass


# ----------------------------- Criterion -----------------------------

def keep_count(keep_fraction: float, total: int) -> int:
    if total <= 0:
        raise PruningError("cannot prune an empty layer")
    if not 0.0 < keep_fraction <= 1.0:
        raise PruningError(f"keep fraction {keep_fraction} outside (0, 1]")
    return min(total, math.ceil(keep_fraction * total - _ROUND_GUARD))


def _top_magnitudes(values: np.ndarray, k: int, allowed: Optional[np.ndarray] = None) -> np.ndarray:
    flat = np.abs(values.ravel())
    scores = -flat
    if allowed is not None:
        scores = np.where(allowed.ravel(), scores, np.inf)
    order = np.argsort(scores, kind="stable")
    keep = np.zeros(flat.size, dtype=bool)
    keep[order[:k]] = True
    return keep.reshape(values.shape)


def _fraction_for(keep_fraction: KeepFraction, name: str) -> float:
    if isinstance(keep_fraction, Mapping):
        try:
            return float(keep_fraction[name])
        except KeyError:
            raise PruningError(f"no keep fraction for layer '{name}'") from None
    return float(keep_fraction)


def large_final_mask(final_weights: Weights, keep_fraction: KeepFraction) -> Mask:
    """Keep the ceil(keep * N) largest-magnitude weights of every layer."""
    bits = []
    for name, kernel in zip(final_weights.names, final_weights.kernels):
        k = keep_count(_fraction_for(keep_fraction, name), kernel.size)
        bits.append(_top_magnitudes(kernel, k))
    return Mask.build(final_weights.names, bits)


def prune_step(prev_mask: Mask, final_weights: Weights, schedule: PruneSchedule, step: int) -> Mask:
    """Mask for schedule[step], restricted to the survivors of prev_mask."""
    if not 0 <= step < len(schedule):
        raise PruningError(f"schedule exhausted: step {step} of {len(schedule)}")
    if prev_mask.names != final_weights.names:
        raise PruningError("mask and weights describe different layers")
    keep = schedule.keep_fraction(step)
    bits = []
    for name, prev, kernel in zip(prev_mask.names, prev_mask.bits, final_weights.kernels):
        if prev.shape != kernel.shape:
            raise PruningError(f"{name}: mask {prev.shape} vs kernel {kernel.shape}")
        k = keep_count(keep, kernel.size)
        alive = int(np.count_nonzero(prev))
        if k > alive:
            raise PruningError(f"{name}: step {step} wants {k} weights but only {alive} survive")
        bits.append(prev if k == alive else _top_magnitudes(kernel, k, allowed=prev))
    return Mask.build(prev_mask.names, bits)


def reset_to_init(init_weights: Weights, mask: Mask) -> Weights:
    """
    Surviving weights go back to their initial values. Pruned ones keep their
    initial value too; the engine multiplies them by 0.
    """
    if mask.names != init_weights.names:
        raise PruningError("mask and weights describe different layers")
    return init_weights


# ----------------------------- Runs -----------------------------

@dataclass(frozen=True, eq=False)
class RunRecord:
    seed: int
    run_id: int
    task: str
    policy: SeedPolicy
    config: NetworkConfig
    schedule: PruneSchedule
    init_weights: Weights
    init_hash: str
    dense_accuracy: float
    masks: Tuple[Mask, ...]
    accuracies: Tuple[float, ...]
    trained: Tuple[Weights, ...]
    probe_outputs: Tuple[np.ndarray, ...]

    @property
    def steps(self) -> int:
        return len(self.masks)

    @property
    def final_outputs(self) -> np.ndarray:
        return self.probe_outputs[-1]

    def mask_at(self, step: int) -> Mask:
        if not -self.steps <= step < self.steps:
            raise IndexError(f"step {step} outside 0..{self.steps - 1}")
        return self.masks[step]

    def equals(self, other: "RunRecord") -> bool:
        return (
            self.init_hash == other.init_hash
            and self.accuracies == other.accuracies
            and self.dense_accuracy == other.dense_accuracy
            and len(self.masks) == len(other.masks)
            and all(a.equals(b) for a, b in zip(self.masks, other.masks))
            and all(a.equals(b) for a, b in zip(self.trained, other.trained))
            and all(np.array_equal(a, b) for a, b in zip(self.probe_outputs, other.probe_outputs))
        )


def iterative_lottery(
    config: NetworkConfig,
    init_weights: Weights,
    task: Task,
    schedule: PruneSchedule,
    policy: SeedPolicy,
    run_id: int,
    probe_size: Optional[int] = None,
) -> RunRecord:
    """
    Train dense, then for every schedule entry: prune by large-final magnitude,
    reset to init_weights, retrain. Each phase draws its own shuffle and noise
    streams ('shuffle/dense', 'shuffle/step-0', ...).
    """
    if init_weights.config != config:
        raise PruningError("init_weights were built for a different network config")
    probe = task.test.images[: settings.PROBE_SIZE if probe_size is None else probe_size]

    def _phase(label: str, weights: Weights, mask: Mask) -> Tuple[Weights, float]:
        return train(
            config,
            weights,
            mask,
            task,
            derive_stream(policy, run_id, f"shuffle/{label}"),
            derive_stream(policy, run_id, f"noise/{label}"),
        )

    mask = Mask.ones(init_weights)
    trained, dense_acc = _phase("dense", init_weights, mask)
    logger.info(
        "seed=%d run=%d task=%s dense acc=%.4f", policy.init_seed, run_id, task.name, dense_acc,
        extra={"seed": policy.init_seed, "run": run_id, "step": -1, "accuracy": dense_acc},
    )

    masks, accs, weights_per_step, outputs = [], [], [], []
    for step in range(len(schedule)):
        mask = prune_step(mask, trained, schedule, step)
        trained, acc = _phase(f"step-{step}", reset_to_init(init_weights, mask), mask)
        masks.append(mask)
        accs.append(acc)
        weights_per_step.append(trained)
        outputs.append(predict_proba(trained, mask, probe))
        logger.info(
            "seed=%d run=%d step=%d pruned=%.1f%% acc=%.4f",
            policy.init_seed, run_id, step, schedule.percentages[step], acc,
            extra={"seed": policy.init_seed, "run": run_id, "step": step, "tau": mask.tau, "accuracy": acc},
        )

    return RunRecord(
        seed=policy.init_seed,
        run_id=run_id,
        task=task.name,
        policy=policy,
        config=config,
        schedule=schedule,
        init_weights=init_weights,
        init_hash=init_weights.digest(),
        dense_accuracy=dense_acc,
        masks=tuple(masks),
        accuracies=tuple(accs),
        trained=tuple(weights_per_step),
        probe_outputs=tuple(outputs),
    )
