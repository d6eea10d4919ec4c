# ticketlab/parsers/base.py
# -*- coding: utf-8 -*-
"""
Common parser base for dataset containers -> Dataset parts.

All concrete dataset parsers MUST implement:
  - parse(data: bytes) -> DatasetPart      (one split from raw bytes)

Standard part (what the loader stitches into a Dataset):
  images: float64 array, (count, channels, H, W), values in [0, 1]
  labels: int64 array, (count,)

Every malformed input raises a positioned ParseError; parsers never return a
partially decoded part.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional

import numpy as np


# ----------------------------- Exceptions -----------------------------

class ParseError(Exception):
    """Raised when raw bytes cannot be decoded; carries the byte offset."""

    def __init__(
        self,
        message: str,
        offset: Optional[int] = None,
        expected: Any = None,
        actual: Any = None,
    ) -> None:
        self.message = message
        self.offset = offset
        self.expected = expected
        self.actual = actual
        super().__init__(str(self))

    def __str__(self) -> str:
        parts = [self.message]
        if self.offset is not None:
            parts.append(f"at byte {self.offset}")
        if self.expected is not None or self.actual is not None:
            parts.append(f"(expected {self.expected!r}, got {self.actual!r})")
        return " ".join(parts)


class IdxParseError(ParseError):
    pass


class CifarParseError(ParseError):
    pass


class MaskFormatError(ParseError):
    pass


class SchemaError(Exception):
    """Raised when a well-formed payload is semantically invalid."""


class VersionMismatchError(SchemaError):
    def __init__(self, kind: str, expected: int, actual: int) -> None:
        self.kind = kind
        self.expected = expected
        self.actual = actual
        super().__init__(f"{kind} version {actual} not supported (expected {expected})")


# --------------------------- Typed Structures -------------------------

Split = Literal["train", "test"]


@dataclass(frozen=True)
class Dataset:
    """images (count, C, H, W) float64 in [0, 1] for file data; labels int64."""
    images: np.ndarray
    labels: np.ndarray
    split: Split = "train"
    class_count: int = 10
    name: str = "dataset"

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise SchemaError(
                f"{self.name}/{self.split}: {self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise SchemaError(f"{self.name}/{self.split}: labels outside [0, {self.class_count})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def example_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def head(self, k: int) -> "Dataset":
        """First-k subsample (deterministic); k <= 0 keeps everything."""
        if k <= 0 or k >= len(self):
            return self
        return Dataset(self.images[:k], self.labels[:k], self.split, self.class_count, self.name)

    def reshaped(self, shape: tuple) -> "Dataset":
        return Dataset(
            self.images.reshape((len(self),) + tuple(shape)),
            self.labels,
            self.split,
            self.class_count,
            self.name,
        )


@dataclass(frozen=True)
class Task:
    """A train split plus its held-out split (also the probe source)."""
    train: Dataset
    test: Dataset
    name: str = "task"

    @property
    def class_count(self) -> int:
        return self.train.class_count

    @property
    def input_shape(self) -> tuple:
        return self.train.example_shape


@dataclass(frozen=True)
class DatasetPart:
    """Output of a single container parse: images or labels (or both)."""
    images: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)


# ------------------------------ Registry ------------------------------

@dataclass
class ParserInfo:
    fmt: str
    cls: type


_PARSER_REGISTRY: Dict[str, ParserInfo] = {}


def register_parser(fmt: str):
    """
    Class decorator to register a parser by container key ('idx'|'cifar').
    Usage:

        @register_parser("idx")
        class IdxParser(ParserBase): ...
    """
    fmt = fmt.lower().strip()

    def _wrap(cls: type) -> type:
        _PARSER_REGISTRY[fmt] = ParserInfo(fmt=fmt, cls=cls)
        cls.fmt = fmt
        return cls

    return _wrap


def get_parser(fmt: str) -> "ParserBase":
    info = _PARSER_REGISTRY.get(fmt.lower().strip())
    if not info:
        raise KeyError(f"No parser registered for format '{fmt}'")
    return info.cls()


def registered_formats() -> list:
    return sorted(_PARSER_REGISTRY)


# ------------------------------ Base Class -----------------------------

class ParserBase(ABC):
    fmt: str = "unknown"

    @abstractmethod
    def parse(self, data: bytes) -> DatasetPart:
        """Decode one container. Raise a ParseError subclass on malformed input."""
        raise NotImplementedError

    # --------- shared checks ---------

    @staticmethod
    def require(data: bytes, offset: int, size: int, what: str, err: type = ParseError) -> None:
        if len(data) < offset + size:
            raise err(
                f"truncated {what}",
                offset=len(data),
                expected=offset + size,
                actual=len(data),
            )
