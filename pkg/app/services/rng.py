# ticketlab/app/services/rng.py
# -*- coding: utf-8 -*-
"""
Named, splittable randomness streams and the three randomness regimes.

A RandomStream is a numpy Generator over a Philox counter-based bit generator
whose 128-bit key is the blake2b digest of the stream's label path. Streams with
the same path produce the same sequence regardless of creation order; a child
stream is `parent.spawn(label)`.

Public API
----------
- RandomStream(*parts) / RandomStream.spawn(label)
- init_stream(init_seed)
- derive_stream(policy, run_id, label)
- regime_free / regime_partial / regime_full / regime_from_name
"""

from __future__ import annotations

import hashlib
from typing import Any, Tuple

import numpy as np

from app.models.dto import SeedPolicy, StreamRegime
from app.utils.hashing import stable_json_dumps

# label roots routed through SeedPolicy
SHUFFLE = "shuffle"
NOISE = "noise"
INIT = "init"


def _key(parts: Tuple[Any, ...]) -> int:
    digest = hashlib.blake2b(stable_json_dumps(list(parts)), digest_size=16).digest()
    return int.from_bytes(digest, "big")


class RandomStream:
    __slots__ = ("parts", "generator")

    def __init__(self, *parts: Any) -> None:
        if not parts:
            raise ValueError("RandomStream needs at least one key part")
        self.parts: Tuple[Any, ...] = tuple(parts)
        self.generator = np.random.Generator(np.random.Philox(key=_key(self.parts)))

    def __repr__(self) -> str:
        return f"RandomStream{self.parts!r}"

    def spawn(self, label: str) -> "RandomStream":
        if not label:
            raise ValueError("stream label must be nonempty")
        return RandomStream(*self.parts, label)

    # thin delegates, so callers rarely touch the Generator directly
    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def uniform(self, low: float, high: float, size: Any) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, scale: float, size: Any) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def random(self, size: Any) -> np.ndarray:
        return self.generator.random(size)


# ----------------------------- Derivation -----------------------------

def init_stream(init_seed: int) -> RandomStream:
    return RandomStream(INIT, int(init_seed))


def _regime_for(policy: SeedPolicy, root: str) -> StreamRegime:
    if root == SHUFFLE:
        return policy.shuffle
    if root == NOISE:
        return policy.noise
    return StreamRegime.free()


def derive_stream(policy: SeedPolicy, run_id: int, label: str) -> RandomStream:
    """
    'init...' labels depend on init_seed only. 'shuffle...' and 'noise...'
    follow the policy; fixed streams ignore run_id, free ones mix it in together
    with init_seed and the entropy salt. Other labels are always free.
    """
    if not label:
        raise ValueError("stream label must be nonempty")
    root = label.split("/", 1)[0]
    if root == INIT:
        return RandomStream(INIT, int(policy.init_seed), label)
    regime = _regime_for(policy, root)
    if regime.mode == "fixed":
        return RandomStream("fixed", int(regime.seed), label)
    return RandomStream("free", int(policy.init_seed), int(run_id), int(policy.entropy), label)


# ----------------------------- Regimes -----------------------------

def regime_free(init_seed: int = 0, entropy: int = 0) -> SeedPolicy:
    return SeedPolicy(init_seed=init_seed, shuffle=StreamRegime.free(), noise=StreamRegime.free(), entropy=entropy)


def regime_partial(
    init_seed: int = 0,
    fixed_seed: int = 0,
    entropy: int = 0,
    stream: str = "shuffle",
) -> SeedPolicy:
    """One training stream replayed across runs ("shuffle" by default, or "noise"); the other stays free."""
    if stream not in ("shuffle", "noise"):
        raise ValueError(f"Unknown partial stream '{stream}' (shuffle|noise)")
    fixed, free = StreamRegime.fixed(fixed_seed), StreamRegime.free()
    return SeedPolicy(
        init_seed=init_seed,
        shuffle=fixed if stream == "shuffle" else free,
        noise=fixed if stream == "noise" else free,
        entropy=entropy,
    )


def regime_full(init_seed: int = 0, fixed_seed: int = 0) -> SeedPolicy:
    return SeedPolicy(
        init_seed=init_seed,
        shuffle=StreamRegime.fixed(fixed_seed),
        noise=StreamRegime.fixed(fixed_seed),
    )


def regime_from_name(
    name: str,
    init_seed: int = 0,
    fixed_seed: int = 0,
    entropy: int = 0,
    partial_stream: str = "shuffle",
) -> SeedPolicy:
    key = (name or "").strip().lower()
    if key == "free":
        return regime_free(init_seed, entropy)
    if key == "partial":
        return regime_partial(init_seed, fixed_seed, entropy, partial_stream)
    if key == "full":
        return regime_full(init_seed, fixed_seed)
    raise ValueError(f"Unknown regime '{name}' (free|partial|full)")
