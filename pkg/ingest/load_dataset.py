# ticketlab/ingest/load_dataset.py
# Builds a train/test Task from a DatasetSpec: synthetic blobs, an IDX quartet
# (optionally gzipped) or CIFAR-10 binary batches.

from __future__ import annotations

import gzip
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from app.core.config import get_data_dir, settings
from app.models.dto import DatasetSpec
from app.services.rng import RandomStream
from parsers import get_parser
from parsers.base import Dataset, ParseError, SchemaError, Task
from parsers.synthetic import synth_task

logger = logging.getLogger(__name__)

IDX_CLASSES = 10
CIFAR_CLASSES = 10


# -----------------------------
# File access
# -----------------------------
def _resolve(path: str, data_dir: Optional[Path]) -> Path:
    p = Path(path).expanduser()
    if not p.is_absolute():
        p = (data_dir or get_data_dir()) / p
    if not p.is_file():
        raise FileNotFoundError(f"Dataset file not found: {p}")
    return p


def read_bytes(path: Path) -> bytes:
    """Raw bytes; '.gz' files are decompressed."""
    if path.suffix == ".gz":
        try:
            return gzip.decompress(path.read_bytes())
        except (OSError, EOFError) as e:
            raise ParseError(f"{path.name}: bad gzip stream: {e}") from e
    return path.read_bytes()


def _parse_file(fmt: str, path: Path):
    try:
        return get_parser(fmt).parse(read_bytes(path))
    except ParseError as e:
        e.message = f"{path.name}: {e.message}"
        raise


# -----------------------------
# Per-kind builders
# -----------------------------
def _idx_split(spec: DatasetSpec, images: str, labels: str, split: str, data_dir: Optional[Path]) -> Dataset:
    img = _parse_file("idx", _resolve(images, data_dir))
    lab = _parse_file("idx", _resolve(labels, data_dir))
    if img.images is None:
        raise SchemaError(f"{images}: expected an IDX image file (magic 0x00000803)")
    if lab.labels is None:
        raise SchemaError(f"{labels}: expected an IDX label file (magic 0x00000801)")
    return Dataset(img.images, lab.labels, split, IDX_CLASSES, spec.name)


def _cifar_split(spec: DatasetSpec, files: tuple, split: str, data_dir: Optional[Path]) -> Dataset:
    parts = [_parse_file("cifar", _resolve(f, data_dir)) for f in files]
    images: List[np.ndarray] = [p.images for p in parts]
    labels: List[np.ndarray] = [p.labels for p in parts]
    return Dataset(np.concatenate(images), np.concatenate(labels), split, CIFAR_CLASSES, spec.name)


def _synthetic(spec: DatasetSpec) -> Task:
    train, test = synth_task(
        classes=spec.classes,
        train_per_class=spec.train_per_class,
        test_per_class=spec.test_per_class,
        dims=spec.dims,
        spread=spec.spread,
        stream=RandomStream("data", spec.data_seed, spec.name),
        separation=spec.separation,
        name=spec.name,
    )
    if spec.input_shape:
        train, test = train.reshaped(spec.input_shape), test.reshaped(spec.input_shape)
    return Task(train, test, spec.name)


# -----------------------------
# MAIN LOADER
# -----------------------------
def load_task(spec: DatasetSpec, data_dir: Optional[Path] = None) -> Task:
    """
    Deterministic: the same spec always yields the same arrays. File datasets
    are cut to their first TRAIN_SUBSAMPLE / TEST_SUBSAMPLE examples unless the
    spec says otherwise (0 keeps everything).
    """
    if spec.kind == "synthetic":
        task = _synthetic(spec)
        train_k = spec.train_subsample or 0
        test_k = spec.test_subsample or 0
    else:
        if spec.kind == "idx":
            train = _idx_split(spec, spec.train_images, spec.train_labels, "train", data_dir)
            test = _idx_split(spec, spec.test_images, spec.test_labels, "test", data_dir)
        else:
            train = _cifar_split(spec, spec.train_files, "train", data_dir)
            test = _cifar_split(spec, spec.test_files, "test", data_dir)
        task = Task(train, test, spec.name)
        train_k = settings.TRAIN_SUBSAMPLE if spec.train_subsample is None else spec.train_subsample
        test_k = settings.TEST_SUBSAMPLE if spec.test_subsample is None else spec.test_subsample

    task = Task(task.train.head(train_k), task.test.head(test_k), spec.name)
    logger.info(
        "loaded %s (%s): train=%d test=%d shape=%s",
        spec.name, spec.kind, len(task.train), len(task.test), task.input_shape,
    )
    return task


if __name__ == "__main__":
    import argparse

    import orjson

    ap = argparse.ArgumentParser(description="Load a dataset spec (JSON) and print its summary.")
    ap.add_argument("spec", help="path to a DatasetSpec JSON file")
    args = ap.parse_args()

    t = load_task(DatasetSpec.model_validate(orjson.loads(Path(args.spec).read_bytes())))
    print(orjson.dumps({
        "name": t.name,
        "train": len(t.train),
        "test": len(t.test),
        "input_shape": list(t.input_shape),
        "classes": t.class_count,
    }, option=orjson.OPT_INDENT_2).decode())
