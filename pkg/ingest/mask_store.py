# ticketlab/ingest/mask_store.py
# -*- coding: utf-8 -*-
"""
TCKT mask files. All integers big-endian.

  b"TCKT"  u16 version  u32 layer_count
  per layer:
    u16 name_len, name (utf-8)
    u8 ndim, ndim x u32 dims
    u64 tau
    ceil(prod(dims) / 8) bytes: row-major bits, MSB first, zero padding
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from app.nn.params import Mask
from parsers.base import MaskFormatError, SchemaError, VersionMismatchError

MAGIC = b"TCKT"
VERSION = 1

PathLike = Union[str, Path]


def encode_mask(mask: Mask) -> bytes:
    out = [MAGIC, struct.pack(">HI", VERSION, len(mask))]
    for name, bits in mask:
        raw = name.encode("utf-8")
        out.append(struct.pack(">H", len(raw)))
        out.append(raw)
        out.append(struct.pack(">B", bits.ndim))
        out.append(struct.pack(f">{bits.ndim}I", *bits.shape))
        out.append(struct.pack(">Q", int(np.count_nonzero(bits))))
        out.append(np.packbits(bits.ravel()).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if end > len(self.data):
            raise MaskFormatError(f"truncated {what}", offset=self.pos, expected=size, actual=len(self.data) - self.pos)
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_mask(data: bytes) -> Mask:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise MaskFormatError("bad mask magic", offset=0, expected=MAGIC, actual=magic)
    (version,) = r.unpack(">H", "version")
    if version != VERSION:
        raise VersionMismatchError("TCKT", VERSION, version)
    (count,) = r.unpack(">I", "layer count")

    names: List[str] = []
    layers: List[np.ndarray] = []
    for i in range(count):
        (name_len,) = r.unpack(">H", f"layer {i} name length")
        start = r.pos
        try:
            name = r.take(name_len, f"layer {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise MaskFormatError(f"layer {i} name is not utf-8", offset=start) from e
        (ndim,) = r.unpack(">B", f"{name} ndim")
        dims = r.unpack(f">{ndim}I", f"{name} dims")
        (tau,) = r.unpack(">Q", f"{name} tau")
        size = math.prod(dims)
        packed_at = r.pos
        packed = np.frombuffer(r.take((size + 7) // 8, f"{name} bitset"), dtype=np.uint8)
        flat = np.unpackbits(packed)
        if flat[size:].any():
            raise MaskFormatError(f"{name}: nonzero padding bits", offset=packed_at + size // 8)
        bits = flat[:size].astype(bool).reshape(dims)
        popcount = int(np.count_nonzero(bits))
        if popcount != tau:
            raise SchemaError(f"{name}: popcount {popcount} != stored tau {tau}")
        names.append(name)
        layers.append(bits)

    if r.pos != len(data):
        raise MaskFormatError("trailing bytes after last layer", offset=r.pos, expected=r.pos, actual=len(data))
    return Mask.build(names, layers)


def write_mask(mask: Mask, path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_mask(mask))
    return p


def read_mask(path: PathLike) -> Mask:
    return decode_mask(Path(path).read_bytes())
