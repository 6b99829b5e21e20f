"""Deterministic RNG derivation helpers.

All randomness in the pipeline flows through named seed derivations so
results never depend on iteration order or scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed or a Generator and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def seed_sequence(seed: int, *parts) -> np.random.SeedSequence:
    """SeedSequence keyed by a root seed plus arbitrary string-able parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(seed)] + words)


def derived_rng(seed: int, *parts) -> np.random.Generator:
    """Generator deterministically derived from (seed, parts)."""
    return np.random.default_rng(seed_sequence(seed, *parts))
