# ticketlab/app/utils/hashing.py
# -*- coding: utf-8 -*-
"""
Content hashes for ticketlab artifacts. All digests are lowercase sha256 hex.

Features
--------
- bytes_sha256 / file_sha256: blob addresses and manifest checksums
- digest_chunks: incremental hash over a sequence of byte chunks (weights, masks)
- stable_json_dumps / stable_json_hash: canonical JSON (sorted keys, numpy aware),
  used for plan fingerprints and random-stream keys
- combine_hashes: order-free roll-up of a run index
"""

from __future__ import annotations

import hashlib
import string
from pathlib import Path
from typing import Any, Iterable, Union

import orjson

_READ_SIZE = 1 << 20
_HEX = frozenset(string.hexdigits.lower())

PathLike = Union[str, Path]


def bytes_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_chunks(chunks: Iterable[bytes]) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
    return h.hexdigest()


def file_sha256(path: PathLike) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"File not found: {p}")
    with p.open("rb") as f:
        return digest_chunks(iter(lambda: f.read(_READ_SIZE), b""))


def stable_json_dumps(obj: Any) -> bytes:
    """Sorted keys, no whitespace; numpy scalars/arrays serialize natively."""
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY, default=str)


def stable_json_hash(obj: Any) -> str:
    return bytes_sha256(stable_json_dumps(obj))


def combine_hashes(digests: Iterable[str]) -> str:
    """sha256 over the sorted digests joined by newlines; input order does not matter."""
    items = sorted(digests)
    for d in items:
        if not isinstance(d, str) or len(d) != 64 or not set(d) <= _HEX:
            raise ValueError(f"not a sha256 hex digest: {d!r}")
    return bytes_sha256("\n".join(items).encode("ascii"))


__all__ = [
    "bytes_sha256",
    "digest_chunks",
    "file_sha256",
    "stable_json_dumps",
    "stable_json_hash",
    "combine_hashes",
]
