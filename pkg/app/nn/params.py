# ticketlab/app/nn/params.py
# -*- coding: utf-8 -*-
"""
Parameter containers: Weights (kernels + biases) and Mask (ticket).

Both are immutable; arrays are flagged read-only so values returned from
training can be shared between processes and threads without copies.
Kernels are 2-D (rows, cols): dense (out, in), conv (out, in*25).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from app.models.dto import NetworkConfig
from app.utils.hashing import digest_chunks

Tensor = np.ndarray


def _frozen(a: np.ndarray, dtype: type) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Weights:
    config: NetworkConfig
    names: Tuple[str, ...]
    kernels: Tuple[Tensor, ...]
    biases: Tuple[Tensor, ...]

    @classmethod
    def build(
        cls,
        config: NetworkConfig,
        kernels: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
    ) -> "Weights":
        layers = config.parameterized_layers()
        if len(kernels) != len(layers) or len(biases) != len(layers):
            raise ValueError(f"expected {len(layers)} kernels/biases, got {len(kernels)}/{len(biases)}")
        for (name, layer), k, b in zip(layers, kernels, biases):
            if k.shape != (layer.rows, layer.cols) or b.shape != (layer.rows,):
                raise ValueError(f"{name}: kernel {k.shape} / bias {b.shape} vs layer {layer.rows}x{layer.cols}")
        return cls(
            config=config,
            names=tuple(n for n, _ in layers),
            kernels=tuple(_frozen(k, np.float64) for k in kernels),
            biases=tuple(_frozen(b, np.float64) for b in biases),
        )

    def __len__(self) -> int:
        return len(self.kernels)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no layer '{name}' (have {list(self.names)})") from None

    def layer(self, name: str) -> Tensor:
        return self.kernels[self.index(name)]

    def replace(
        self,
        kernels: Optional[Sequence[np.ndarray]] = None,
        biases: Optional[Sequence[np.ndarray]] = None,
    ) -> "Weights":
        return Weights.build(
            self.config,
            self.kernels if kernels is None else kernels,
            self.biases if biases is None else biases,
        )

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Weights":
        return self.replace([fn(k) for k in self.kernels], [fn(b) for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.kernels + self.biases)

    def equals(self, other: "Weights") -> bool:
        """Bit-exact comparison of every kernel and bias."""
        if self.names != other.names:
            return False
        pairs = zip(self.kernels + self.biases, other.kernels + other.biases)
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)

    def digest(self) -> str:
        """sha256 over names, shapes and big-endian float64 bytes."""
        chunks = []
        for name, k, b in zip(self.names, self.kernels, self.biases):
            chunks.append(f"{name}:{k.shape[0]}x{k.shape[1]};".encode())
            chunks.append(k.astype(">f8").tobytes())
            chunks.append(b.astype(">f8").tobytes())
        return digest_chunks(chunks)

    def as_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name, k, b in zip(self.names, self.kernels, self.biases):
            out[f"{name}.kernel"] = k
            out[f"{name}.bias"] = b
        return out

    @classmethod
    def from_arrays(cls, config: NetworkConfig, arrays: Dict[str, np.ndarray]) -> "Weights":
        names = [n for n, _ in config.parameterized_layers()]
        try:
            return cls.build(config, [arrays[f"{n}.kernel"] for n in names], [arrays[f"{n}.bias"] for n in names])
        except KeyError as e:
            raise ValueError(f"weight bundle missing array {e}") from None


@dataclass(frozen=True, eq=False)
class Mask:
    """Per-layer boolean keep indicator, shaped like the kernel it masks."""
    names: Tuple[str, ...]
    bits: Tuple[np.ndarray, ...]

    @classmethod
    def build(cls, names: Sequence[str], bits: Sequence[np.ndarray]) -> "Mask":
        if len(names) != len(bits):
            raise ValueError("mask names and layers differ in length")
        return cls(tuple(names), tuple(_frozen(b, np.bool_) for b in bits))

    @classmethod
    def ones(cls, weights: Weights) -> "Mask":
        return cls.build(weights.names, [np.ones(k.shape, dtype=bool) for k in weights.kernels])

    @classmethod
    def zeros(cls, weights: Weights) -> "Mask":
        return cls.build(weights.names, [np.zeros(k.shape, dtype=bool) for k in weights.kernels])

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(zip(self.names, self.bits))

    def layer(self, name: str) -> np.ndarray:
        try:
            return self.bits[self.names.index(name)]
        except ValueError:
            raise KeyError(f"no mask layer '{name}'") from None

    def replace_layer(self, name: str, bits: np.ndarray) -> "Mask":
        i = self.names.index(name)
        return Mask.build(self.names, self.bits[:i] + (bits,) + self.bits[i + 1:])

    @property
    def tau(self) -> Dict[str, int]:
        return {n: int(np.count_nonzero(b)) for n, b in self}

    @property
    def shapes(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(b.shape for b in self.bits)

    def population(self, name: str) -> int:
        return int(self.layer(name).size)

    def equals(self, other: "Mask") -> bool:
        return self.names == other.names and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.bits, other.bits)
        )

    def is_subset_of(self, other: "Mask") -> bool:
        """Every kept position here is kept in `other` too."""
        return self.names == other.names and all(
            not np.any(a & ~b) for a, b in zip(self.bits, other.bits)
        )

    def digest(self) -> str:
        chunks = []
        for name, b in self:
            chunks.append(f"{name}:{'x'.join(map(str, b.shape))};".encode())
            chunks.append(np.packbits(b.ravel()).tobytes())
        return digest_chunks(chunks)
