# ticketlab/parsers/synthetic.py
# -*- coding: utf-8 -*-
"""
Gaussian class blobs, the desk-scale stand-in for image datasets.

Class centers are `separation` apart along orthonormal directions drawn from
the stream (a circle in the first two coordinates when dims < classes). Values
are not rescaled to [0, 1].
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from app.services.rng import RandomStream

from .base import Dataset


def blob_centers(classes: int, dims: int, separation: float, stream: RandomStream) -> np.ndarray:
    if dims >= classes:
        q, _ = np.linalg.qr(stream.normal(1.0, (dims, classes)))
        return separation * q.T
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = np.zeros((classes, dims))
    if dims == 1:
        centers[:, 0] = separation * np.arange(classes)
    else:
        radius = separation / (2.0 * np.sin(np.pi / classes))
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    return centers


def _draw(centers: np.ndarray, per_class: int, spread: float, stream: RandomStream) -> Tuple[np.ndarray, np.ndarray]:
    classes, dims = centers.shape
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    points = centers[labels] + stream.normal(1.0, (labels.size, dims)) * spread
    return points, labels


def synth_blobs(
    classes: int,
    per_class: int,
    dims: int,
    spread: float,
    stream: RandomStream,
    separation: float = 1.0,
    split: str = "train",
    name: str = "blobs",
) -> Dataset:
    """classes * per_class examples of shape (dims,), in shuffled order."""
    if classes < 2:
        raise ValueError("synth_blobs needs at least 2 classes")
    if per_class < 1 or dims < 1:
        raise ValueError("per_class and dims must be positive")
    centers = blob_centers(classes, dims, separation, stream.spawn("centers"))
    points, labels = _draw(centers, per_class, spread, stream.spawn("points"))
    order = stream.spawn("order").permutation(labels.size)
    return Dataset(points[order], labels[order], split, classes, name)


def synth_task(
    classes: int,
    train_per_class: int,
    test_per_class: int,
    dims: int,
    spread: float,
    stream: RandomStream,
    separation: float = 1.0,
    name: str = "blobs",
) -> Tuple[Dataset, Dataset]:
    """Train/test splits sharing the same centers."""
    if classes < 2:
        raise ValueError("synth_task needs at least 2 classes")
    centers = blob_centers(classes, dims, separation, stream.spawn("centers"))
    train_x, train_y = _draw(centers, train_per_class, spread, stream.spawn("train"))
    test_x, test_y = _draw(centers, test_per_class, spread, stream.spawn("test"))
    tr = stream.spawn("train-order").permutation(train_y.size)
    te = stream.spawn("test-order").permutation(test_y.size)
    return (
        Dataset(train_x[tr], train_y[tr], "train", classes, name),
        Dataset(test_x[te], test_y[te], "test", classes, name),
    )
