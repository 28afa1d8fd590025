"""Seed derivation helpers.

Every source of randomness in the workbench is a numpy Generator built from
a (seed, purpose) pair, so one top-level seed reproduces a whole experiment.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, purpose: str) -> int:
    """Derive a child seed from a top-level seed and a purpose label."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def new_rng(seed: int, purpose: str | None = None) -> np.random.Generator:
    """Seeded PCG64 generator, optionally derived for the given purpose."""
    if purpose is not None:
        seed = derive_seed(seed, purpose)
    return np.random.Generator(np.random.PCG64(seed))
