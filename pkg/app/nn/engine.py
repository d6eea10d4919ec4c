# ticketlab/app/nn/engine.py
# -*- coding: utf-8 -*-
"""
Masked feed-forward engine: init, forward, backward, SGD, training loop.

Features
--------
- float64 throughout; identical inputs and stream state give bit-identical results
- pruned weights enter every product as exact 0.0 and receive exact 0.0 gradients
- softmax + mean cross-entropy fused in backward: dlogits = (p - onehot) / B
- optional Gaussian gradient noise drawn from a dedicated stream (mask-respecting)

Public API
----------
init_weights, forward, predict_proba, backward, sgd_step, train, evaluate
"""

from __future__ import annotations

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from app.models.dto import NetworkConfig
from app.services.rng import RandomStream, init_stream
from parsers.base import Dataset, Task

from .layers import get_layer
from .params import Mask, Tensor, Weights

logger = logging.getLogger(__name__)

EVAL_BATCH = 512


# ----------------------------- Exceptions -----------------------------

class ShapeMismatchError(ValueError):
    pass


class LabelRangeError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


class TrainingDivergedError(ArithmeticError):
    pass


# ----------------------------- Init -----------------------------

def init_weights(config: NetworkConfig, seed: int) -> Weights:
    """
    Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases. Each layer draws
    from a sub-stream labelled by position, kind and shape, so two configs that
    agree on a layer share its initial values for the same seed.
    """
    root = init_stream(seed)
    kernels: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for pos, layer in enumerate(config.layers):
        if not layer.parameterized:
            continue
        stream = root.spawn(f"{pos}:{layer.kind}:{layer.rows}x{layer.cols}")
        bound = 1.0 / math.sqrt(layer.cols)
        kernels.append(stream.uniform(-bound, bound, (layer.rows, layer.cols)))
        biases.append(np.zeros(layer.rows))
    return Weights.build(config, kernels, biases)


# ----------------------------- Checks -----------------------------

def _check_mask(weights: Weights, mask: Mask) -> None:
    if mask.names != weights.names or mask.shapes != tuple(k.shape for k in weights.kernels):
        raise ShapeMismatchError(
            f"mask layers {list(zip(mask.names, mask.shapes))} do not match weights "
            f"{[(n, k.shape) for n, k in zip(weights.names, weights.kernels)]}"
        )


def _check_batch(config: NetworkConfig, batch: Tensor) -> None:
    if batch.ndim < 1 or tuple(batch.shape[1:]) != tuple(config.input_shape):
        raise ShapeMismatchError(f"batch shape {batch.shape} vs input shape (B, {', '.join(map(str, config.input_shape))})")


def _check_labels(config: NetworkConfig, labels: np.ndarray, batch: Tensor) -> None:
    if labels.shape != (batch.shape[0],):
        raise ShapeMismatchError(f"labels shape {labels.shape} vs batch size {batch.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= config.class_count):
        raise LabelRangeError(f"labels must lie in [0, {config.class_count})")


# ----------------------------- Passes -----------------------------

def _masked_kernels(weights: Weights, mask: Mask) -> List[np.ndarray]:
    return [np.where(m, k, 0.0) for k, m in zip(weights.kernels, mask.bits)]


def _logits(weights: Weights, mask: Mask, batch: Tensor, keep_cache: bool):
    """Run every layer but the final softmax. Returns logits and per-layer caches."""
    config = weights.config
    kernels = _masked_kernels(weights, mask)
    caches = []
    x = np.asarray(batch, dtype=np.float64)
    p = 0
    for layer in config.layers[:-1]:
        op = get_layer(layer.kind)
        if layer.parameterized:
            x, cache = op.forward(x, kernels[p], weights.biases[p])
            caches.append((op, cache, p))
            p += 1
        else:
            x, cache = op.forward(x, None, None)
            caches.append((op, cache, None))
        if not keep_cache:
            caches.clear()
    return x, caches, kernels


def forward(weights: Weights, mask: Mask, batch: Tensor) -> Tensor:
    """Class probabilities, one row per example."""
    _check_mask(weights, mask)
    _check_batch(weights.config, batch)
    logits, _, _ = _logits(weights, mask, batch, keep_cache=False)
    return softmax(logits, axis=-1)


def predict_proba(weights: Weights, mask: Mask, images: Tensor, batch_size: int = EVAL_BATCH) -> Tensor:
    _check_mask(weights, mask)
    _check_batch(weights.config, images)
    if images.shape[0] == 0:
        return np.zeros((0, weights.config.class_count))
    parts = [
        softmax(_logits(weights, mask, images[i:i + batch_size], keep_cache=False)[0], axis=-1)
        for i in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(parts, axis=0)


def backward(weights: Weights, mask: Mask, batch: Tensor, labels: np.ndarray) -> Tuple[float, Weights]:
    """Mean cross-entropy and its gradient; masked kernel entries get exactly 0."""
    config = weights.config
    _check_mask(weights, mask)
    _check_batch(config, batch)
    labels = np.asarray(labels)
    _check_labels(config, labels, batch)
    if batch.shape[0] == 0:
        raise EmptyDatasetError("backward on an empty batch")

    logits, caches, kernels = _logits(weights, mask, batch, keep_cache=True)
    rows = np.arange(labels.size)
    logp = log_softmax(logits, axis=-1)
    loss = float(-logp[rows, labels].mean())

    dx = np.exp(logp)
    dx[rows, labels] -= 1.0
    dx /= labels.size

    dkernels: List[Optional[np.ndarray]] = [None] * len(kernels)
    dbiases: List[Optional[np.ndarray]] = [None] * len(kernels)
    for op, cache, p in reversed(caches):
        dx, dk, db = op.backward(dx, cache, kernels[p] if p is not None else None)
        if p is not None:
            dkernels[p] = np.where(mask.bits[p], dk, 0.0)
            dbiases[p] = db
    return loss, weights.replace(dkernels, dbiases)


def sgd_step(weights: Weights, grads: Weights, lr: float) -> Weights:
    if grads.names != weights.names:
        raise ShapeMismatchError("gradient layers do not match weights")
    return weights.replace(
        [w - lr * g for w, g in zip(weights.kernels, grads.kernels)],
        [b - lr * g for b, g in zip(weights.biases, grads.biases)],
    )


def _add_noise(grads: Weights, mask: Mask, std: float, stream: RandomStream) -> Weights:
    return grads.replace(
        [g + np.where(m, stream.normal(std, g.shape), 0.0) for g, m in zip(grads.kernels, mask.bits)],
        [g + stream.normal(std, g.shape) for g in grads.biases],
    )


# ----------------------------- Loops -----------------------------

def evaluate(weights: Weights, mask: Mask, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise EmptyDatasetError(f"{dataset.name}/{dataset.split} is empty")
    probs = predict_proba(weights, mask, dataset.images)
    return float(np.mean(probs.argmax(axis=1) == dataset.labels))


def train(
    config: NetworkConfig,
    weights: Weights,
    mask: Mask,
    task: Task,
    stream: RandomStream,
    noise: Optional[RandomStream] = None,
) -> Tuple[Weights, float]:
    """
    config.epochs passes of minibatch SGD. `stream` orders the batches; `noise`
    (when given and config.grad_noise_std > 0) perturbs every gradient.
    Returns the trained weights and held-out accuracy.
    """
    data = task.train
    if len(data) == 0:
        raise EmptyDatasetError(f"{data.name}/train is empty")
    if len(task.test) == 0:
        raise EmptyDatasetError(f"{task.test.name}/test is empty")
    _check_mask(weights, mask)
    _check_batch(config, data.images)

    use_noise = noise is not None and config.grad_noise_std > 0
    n, bs = len(data), config.batch_size
    for epoch in range(config.epochs):
        order = stream.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = backward(weights, mask, data.images[idx], data.labels[idx])
            if use_noise:
                grads = _add_noise(grads, mask, config.grad_noise_std, noise)
            weights = sgd_step(weights, grads, config.learning_rate)
            if not weights.is_finite():
                raise TrainingDivergedError(f"non-finite weights in epoch {epoch} (lr={config.learning_rate})")
            total += loss * idx.size
        logger.debug("epoch %d loss %.6f", epoch, total / n)

    acc = evaluate(weights, mask, task.test)
    return weights, acc
