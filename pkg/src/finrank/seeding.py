"""Deterministic 64-bit seed splitting."""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 output step applied to ``x`` (mod 2**64)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def spawn_seed(seed: int, index: int) -> int:
    """Child seed for stream ``index`` of ``seed``: ``splitmix64(splitmix64(seed) + index)``.

    Hashing the parent first keeps the streams of nearby parents disjoint.
    """
    return splitmix64((splitmix64(int(seed) & _MASK) + int(index)) & _MASK)


def child_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(spawn_seed(seed, index))
