# ticketlab/tests/conftest.py
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np
import pytest

from app.models.dto import LayerShape, NetworkConfig, PruneSchedule
from app.nn.engine import init_weights
from app.nn.params import Mask, Weights
from app.services.pruning import RunRecord
from app.services.rng import RandomStream, regime_free
from parsers.base import Task
from parsers.synthetic import synth_task

PROTOCOL = (50.0, 60.0, 80.0, 90.0, 95.0, 98.0)


def mlp(inputs: int, hidden: int, classes: int, **training) -> NetworkConfig:
    return NetworkConfig.preset("mlp", (inputs,), classes, hidden=hidden, **training)


def dense_chain(widths: Sequence[int], **training) -> NetworkConfig:
    """dense/relu stack: widths = [inputs, hidden..., classes]."""
    layers: List[LayerShape] = []
    for i, (fan_in, out) in enumerate(zip(widths, widths[1:])):
        layers.append(LayerShape(kind="dense", rows=out, cols=fan_in))
        if i < len(widths) - 2:
            layers.append(LayerShape(kind="relu"))
    layers.append(LayerShape(kind="softmax"))
    return NetworkConfig(layers=tuple(layers), input_shape=(widths[0],), class_count=widths[-1], **training)


def weights_from(config: NetworkConfig, kernels: Sequence[np.ndarray], biases: Optional[Sequence[np.ndarray]] = None) -> Weights:
    kernels = [np.asarray(k, dtype=np.float64) for k in kernels]
    if biases is None:
        biases = [np.zeros(k.shape[0]) for k in kernels]
    return Weights.build(config, kernels, biases)


def random_mask(names: Sequence[str], shapes: Sequence[tuple], tau: Sequence[int], rng: np.random.Generator) -> Mask:
    bits = []
    for shape, t in zip(shapes, tau):
        flat = np.zeros(int(np.prod(shape)), dtype=bool)
        flat[rng.choice(flat.size, size=t, replace=False)] = True
        bits.append(flat.reshape(shape))
    return Mask.build(names, bits)


@pytest.fixture
def blob_task() -> Task:
    """4 well separated classes in 20 dims; 50 train / 25 test per class."""
    train, test = synth_task(
        classes=4, train_per_class=50, test_per_class=25, dims=20, spread=0.1,
        stream=RandomStream("test-data", 1), separation=2.0, name="blobs",
    )
    return Task(train, test, "blobs")


@pytest.fixture
def small_mlp() -> NetworkConfig:
    # first layer 20x20 = 400 weights, last 4x20 = 80
    return mlp(20, 20, 4, epochs=3, learning_rate=0.1, batch_size=16, grad_noise_std=0.002)


@pytest.fixture
def make_record() -> Callable[..., RunRecord]:
    """RunRecord with random masks of fixed tau; no training involved."""
    config = dense_chain([20, 20, 4])
    init = init_weights(config, 0)
    shapes = [k.shape for k in init.kernels]

    def _make(seed: int, run: int, tau=(100, 20), steps: int = 1, task: str = "task", cfg: Optional[NetworkConfig] = None) -> RunRecord:
        c = cfg or config
        w = init if cfg is None else init_weights(cfg, seed)
        sh = shapes if cfg is None else [k.shape for k in w.kernels]
        rng = np.random.default_rng([seed, run, len(task)])
        masks = tuple(random_mask(w.names, sh, tau, rng) for _ in range(steps))
        return RunRecord(
            seed=seed,
            run_id=run,
            task=task,
            policy=regime_free(seed),
            config=c,
            schedule=PruneSchedule(percentages=PROTOCOL[:steps]),
            init_weights=w,
            init_hash=w.digest(),
            dense_accuracy=0.9,
            masks=masks,
            accuracies=tuple(0.8 for _ in range(steps)),
            trained=tuple(w for _ in range(steps)),
            probe_outputs=tuple(rng.dirichlet(np.ones(4), size=8) for _ in range(steps)),
        )

    return _make
