# ticketlab/app/models/dto.py
# -*- coding: utf-8 -*-
"""
Data Transfer Objects (DTOs) for the ticket laboratory.

Everything that is configured, persisted as JSON or emitted in a report is a
pydantic model here. Array-carrying runtime values (Weights, Mask, RunRecord)
live next to the code that produces them.
"""

from __future__ import annotations

import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import get_default_schedule, settings


# ============================================================
# Network layout
# ============================================================

LayerKind = Literal["dense", "conv5x5", "maxpool2x2", "relu", "softmax"]
PARAMETERIZED: Tuple[str, ...] = ("dense", "conv5x5")
KERNEL_AREA = 25  # 5x5


class LayerShape(BaseModel):
    """
    One layer. For parameterized layers `rows` is the output width (units or
    out-channels) and `cols` the fan-in (inputs, or in-channels * 25).
    """
    model_config = ConfigDict(frozen=True)

    kind: LayerKind
    rows: int = 0
    cols: int = 0
    name: Optional[str] = None

    @model_validator(mode="after")
    def _check_counts(self) -> "LayerShape":
        if self.kind in PARAMETERIZED:
            if self.rows < 1 or self.cols < 1:
                raise ValueError(f"{self.kind} layer needs rows >= 1 and cols >= 1")
            if self.kind == "conv5x5" and self.cols % KERNEL_AREA:
                raise ValueError("conv5x5 cols must be in_channels * 25")
        elif self.rows or self.cols:
            raise ValueError(f"{self.kind} layer carries no weights (rows=cols=0)")
        return self

    @property
    def parameterized(self) -> bool:
        return self.kind in PARAMETERIZED

    @property
    def weight_count(self) -> int:
        return self.rows * self.cols if self.parameterized else 0


class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    layers: Tuple[LayerShape, ...]
    input_shape: Tuple[int, ...]
    class_count: int = Field(..., ge=2)
    epochs: int = Field(default_factory=lambda: settings.EPOCHS, ge=1)
    learning_rate: float = Field(default_factory=lambda: settings.LEARNING_RATE, gt=0)
    batch_size: int = Field(default_factory=lambda: settings.BATCH_SIZE, ge=1)
    grad_noise_std: float = Field(default_factory=lambda: settings.GRAD_NOISE_STD, ge=0)

    @model_validator(mode="after")
    def _check_compat(self) -> "NetworkConfig":
        self.io_shapes()  # raises on incompatibility
        return self

    # ---------------- shape bookkeeping ----------------
    def io_shapes(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        """(input shape, output shape) per layer, per example (no batch axis)."""
        if not self.layers:
            raise ValueError("network has no layers")
        if self.layers[-1].kind != "softmax":
            raise ValueError("last layer must be softmax")
        if not any(l.parameterized for l in self.layers):
            raise ValueError("network has no parameterized layer")

        out: List[Tuple[Tuple[int, ...], Tuple[int, ...]]] = []
        shape = tuple(int(d) for d in self.input_shape)
        for i, layer in enumerate(self.layers):
            src = shape
            if layer.kind == "conv5x5":
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv5x5 needs (C, H, W) input, got {shape}")
                c, h, w = shape
                if layer.cols != c * KERNEL_AREA:
                    raise ValueError(f"layer {i}: conv5x5 cols {layer.cols} != {c}*25")
                if h < 5 or w < 5:
                    raise ValueError(f"layer {i}: input {h}x{w} smaller than 5x5 kernel")
                shape = (layer.rows, h - 4, w - 4)
            elif layer.kind == "maxpool2x2":
                if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                    raise ValueError(f"layer {i}: maxpool2x2 needs (C, H>=2, W>=2), got {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif layer.kind == "dense":
                flat = math.prod(shape)
                if layer.cols != flat:
                    raise ValueError(f"layer {i}: dense cols {layer.cols} != flattened input {flat}")
                shape = (layer.rows,)
            elif layer.kind == "softmax":
                if i != len(self.layers) - 1:
                    raise ValueError("softmax must be the last layer")
                if shape != (self.class_count,):
                    raise ValueError(f"softmax input {shape} != ({self.class_count},)")
            out.append((src, shape))
        return out

    def parameterized_layers(self) -> List[Tuple[str, LayerShape]]:
        """[(name, layer)] for weight-carrying layers, in order (conv1, dense3, ...)."""
        items: List[Tuple[str, LayerShape]] = []
        k = 0
        for layer in self.layers:
            if layer.parameterized:
                k += 1
                prefix = "conv" if layer.kind == "conv5x5" else "dense"
                items.append((layer.name or f"{prefix}{k}", layer))
        return items

    # ---------------- presets ----------------
    @classmethod
    def preset(
        cls,
        name: str,
        input_shape: Tuple[int, ...],
        class_count: int,
        hidden: int = 40,
        **training: Any,
    ) -> "NetworkConfig":
        """
        'mlp'        dense(hidden) -> relu -> dense(classes)
        'lenet'      conv 6 / conv 16 (5x5, max-pool), dense 120 / 84
        'equal-size' first layer 400 weights, inner layers 2400/2500, last 250
        """
        key = name.strip().lower()
        flat = math.prod(input_shape)
        if key == "mlp":
            layers = [
                LayerShape(kind="dense", rows=hidden, cols=flat),
                LayerShape(kind="relu"),
                LayerShape(kind="dense", rows=class_count, cols=hidden),
                LayerShape(kind="softmax"),
            ]
        elif key in ("lenet", "equal-size"):
            if len(input_shape) != 3:
                raise ValueError(f"preset '{name}' needs (C, H, W) input")
            c, h, w = input_shape
            first, second = (6, 16) if key == "lenet" else (16, 6)
            fh, fw = ((h - 4) // 2 - 4) // 2, ((w - 4) // 2 - 4) // 2
            conv_flat = second * fh * fw
            layers = [
                LayerShape(kind="conv5x5", rows=first, cols=c * KERNEL_AREA),
                LayerShape(kind="maxpool2x2"),
                LayerShape(kind="relu"),
                LayerShape(kind="conv5x5", rows=second, cols=first * KERNEL_AREA),
                LayerShape(kind="maxpool2x2"),
                LayerShape(kind="relu"),
            ]
            widths = [120, 84] if key == "lenet" else [25, 100, 25]
            fan_in = conv_flat
            for width in widths:
                layers += [LayerShape(kind="dense", rows=width, cols=fan_in), LayerShape(kind="relu")]
                fan_in = width
            layers += [LayerShape(kind="dense", rows=class_count, cols=fan_in), LayerShape(kind="softmax")]
        else:
            raise ValueError(f"Unknown network preset '{name}'")
        return cls(layers=tuple(layers), input_shape=tuple(input_shape), class_count=class_count, **training)


# ============================================================
# Randomness regimes
# ============================================================

class StreamRegime(BaseModel):
    """'free' derives fresh entropy per run; 'fixed' replays the same stream."""
    model_config = ConfigDict(frozen=True)

    mode: Literal["free", "fixed"] = "free"
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _seed_for_fixed(self) -> "StreamRegime":
        if self.mode == "fixed" and self.seed is None:
            raise ValueError("fixed regime needs a seed")
        return self

    @classmethod
    def free(cls) -> "StreamRegime":
        return cls(mode="free")

    @classmethod
    def fixed(cls, seed: int) -> "StreamRegime":
        return cls(mode="fixed", seed=seed)


class SeedPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    init_seed: int
    shuffle: StreamRegime = Field(default_factory=StreamRegime.free)
    noise: StreamRegime = Field(default_factory=StreamRegime.free)
    entropy: int = 0  # salt mixed into free streams

    @property
    def regime_name(self) -> str:
        fixed = [r.mode == "fixed" for r in (self.shuffle, self.noise)]
        if all(fixed):
            return "full"
        return "partial" if any(fixed) else "free"

    def with_init_seed(self, init_seed: int) -> "SeedPolicy":
        return self.model_copy(update={"init_seed": init_seed})


# ============================================================
# Pruning schedule
# ============================================================

class PruneSchedule(BaseModel):
    """Cumulative pruning percentages relative to the original layer size."""
    model_config = ConfigDict(frozen=True)

    percentages: Tuple[float, ...] = Field(default_factory=lambda: tuple(get_default_schedule()))

    @field_validator("percentages")
    @classmethod
    def _strictly_increasing(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not v:
            raise ValueError("schedule is empty")
        for p in v:
            if not 0.0 < p < 100.0:
                raise ValueError(f"pruning percentage {p} outside (0, 100)")
        for a, b in zip(v, v[1:]):
            if not b > a:
                raise ValueError(f"schedule must be strictly increasing ({a} -> {b})")
        return v

    def __len__(self) -> int:
        return len(self.percentages)

    def keep_fraction(self, step: int) -> float:
        return 1.0 - self.percentages[step] / 100.0

    @classmethod
    def parse(cls, raw: str) -> "PruneSchedule":
        from app.core.config import parse_schedule

        return cls(percentages=tuple(parse_schedule(raw)))


# ============================================================
# Statistics
# ============================================================

BaselineModel = Literal[
    "hypergeometric", "recursive-shared", "recursive-never", "normal-approx", "monte-carlo",
]


class BaselineEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    sigma: float = Field(..., ge=0)
    model: BaselineModel
    max_mean: Optional[float] = None   # K^max for the recursive models
    stderr: Optional[float] = None     # Monte Carlo only
    trials: Optional[int] = None

    @property
    def variance(self) -> float:
        return self.sigma ** 2

    def normal_approx(self) -> "BaselineEstimate":
        """
        Plotting normal: the half-spread 0.5*(K^max - K) is the 2-sigma radius,
        so sigma = 0.25*(K^max - K).
        """
        if self.max_mean is None:
            return self.model_copy(update={"model": "normal-approx"})
        return BaselineEstimate(
            mean=self.mean,
            sigma=0.25 * abs(self.max_mean - self.mean),
            model="normal-approx",
            max_mean=self.max_mean,
        )


class OverlapStat(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer: str
    layer_index: int
    population: int              # N = m*n
    tau: int
    x: int                       # |a AND b|
    pct_of_mask: float
    step: int
    seed_a: int
    run_a: int
    seed_b: int
    run_b: int
    task_a: str = "task"
    task_b: str = "task"

    @model_validator(mode="after")
    def _bounds(self) -> "OverlapStat":
        if not 0 <= self.x <= self.tau <= self.population:
            raise ValueError(f"overlap {self.x} outside [0, tau={self.tau}] (N={self.population})")
        return self

    @property
    def pair_id(self) -> str:
        return f"{self.task_a}:s{self.seed_a}r{self.run_a}|{self.task_b}:s{self.seed_b}r{self.run_b}"


class SharedNeverStat(BaseModel):
    """Per-seed, per-layer shared-by-all / never-covered counts."""
    model_config = ConfigDict(frozen=True)

    layer: str
    layer_index: int
    seed: int
    step: int
    population: int
    tau: int
    masks: int
    shared: int
    task: str = "task"
    shared_pct: float            # of tau
    never: int                   # N - covered
    never_pct: float             # of min(N, k*tau), uncovered part of the coverable area
    shared_baseline: BaselineEstimate
    never_baseline: BaselineEstimate


# ============================================================
# Datasets and plans
# ============================================================

class DatasetSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["synthetic", "idx", "cifar"] = "synthetic"
    name: str = "blobs"

    # idx: image/label file pairs (optionally .gz)
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None

    # cifar: binary batches
    train_files: Tuple[str, ...] = ()
    test_files: Tuple[str, ...] = ()

    # synthetic blobs
    classes: int = Field(default=4, ge=2)
    dims: int = Field(default=20, ge=1)
    spread: float = Field(default=0.3, ge=0)
    separation: float = Field(default=1.0, gt=0)
    train_per_class: int = Field(default=100, ge=1)
    test_per_class: int = Field(default=50, ge=1)
    data_seed: int = 1234
    input_shape: Optional[Tuple[int, ...]] = None  # reshape synthetic rows, e.g. (1, 28, 28)

    # first-k subsampling (None = settings default, 0 = everything)
    train_subsample: Optional[int] = None
    test_subsample: Optional[int] = None

    @model_validator(mode="after")
    def _paths_present(self) -> "DatasetSpec":
        if self.kind == "idx":
            missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels") if not getattr(self, k)]
            if missing:
                raise ValueError(f"idx dataset '{self.name}' missing paths: {missing}")
        if self.kind == "cifar" and (not self.train_files or not self.test_files):
            raise ValueError(f"cifar dataset '{self.name}' needs train_files and test_files")
        return self


class NetworkSpec(BaseModel):
    """Plan-level network description; materialized per dataset."""
    model_config = ConfigDict(frozen=True)

    preset: Literal["mlp", "lenet", "equal-size"] = "mlp"
    hidden: int = Field(default=40, ge=1)
    epochs: int = Field(default_factory=lambda: settings.EPOCHS, ge=1)
    learning_rate: float = Field(default_factory=lambda: settings.LEARNING_RATE, gt=0)
    batch_size: int = Field(default_factory=lambda: settings.BATCH_SIZE, ge=1)
    grad_noise_std: float = Field(default_factory=lambda: settings.GRAD_NOISE_STD, ge=0)

    def build(self, input_shape: Tuple[int, ...], class_count: int) -> NetworkConfig:
        return NetworkConfig.preset(
            self.preset,
            input_shape,
            class_count,
            hidden=self.hidden,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            grad_noise_std=self.grad_noise_std,
        )


ComparisonMode = Literal["within", "across", "cross-task"]
RegimeName = Literal["free", "partial", "full"]
PartialStream = Literal["shuffle", "noise"]


class ExperimentPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    seeds: Tuple[int, ...] = Field(default_factory=lambda: tuple(range(settings.SEEDS)))
    runs: int = Field(default_factory=lambda: settings.RUNS, ge=1)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    schedule: PruneSchedule = Field(default_factory=PruneSchedule)
    regime: RegimeName = "free"
    partial_stream: PartialStream = "shuffle"  # the stream regime "partial" holds fixed
    fixed_seed: int = 0
    entropy: int = 0
    datasets: Tuple[DatasetSpec, ...] = Field(default_factory=lambda: (DatasetSpec(),))
    modes: Tuple[ComparisonMode, ...] = ("within", "across")
    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)
    probe_size: int = Field(default_factory=lambda: settings.PROBE_SIZE, ge=2)

    @model_validator(mode="after")
    def _check_plan(self) -> "ExperimentPlan":
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if not self.datasets:
            raise ValueError("plan needs at least one dataset")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("dataset names must be distinct")
        if "cross-task" in self.modes and len(self.datasets) < 2:
            raise ValueError("cross-task mode needs at least two datasets")
        return self

    def summary(self) -> Dict[str, Any]:
        return {
            "seeds": list(self.seeds),
            "runs": self.runs,
            "steps": len(self.schedule),
            "regime": self.regime,
            "partial_stream": self.partial_stream,
            "datasets": [d.name for d in self.datasets],
        }
