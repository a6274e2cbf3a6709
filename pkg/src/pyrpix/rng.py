"""Counter-based uniforms keyed by (seed, group, pixel, channel).

Every draw is a pure function of its key, hashed with the SplitMix64
finaliser, so batching, threading or write order can never change a sample.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_key(*parts) -> np.ndarray:
    """uint64 hash of broadcastable integer key components."""
    with np.errstate(over="ignore"):
        h = np.zeros((), dtype=np.uint64)
        for p in parts:
            p = np.asarray(p)
            if p.dtype != np.uint64:
                p = p.astype(np.int64).astype(np.uint64)
            h = _mix(h + p * _GOLDEN + _GOLDEN)
    return h


def uniform(seed, group, pixel, channel) -> np.ndarray:
    """Uniform draws in [0, 1) with 53 random bits."""
    if isinstance(seed, int):
        seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    h = hash_key(seed, group, pixel, channel)
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53


class Rng:
    """Stream factory bound to one 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def uniform(self, group: int, pixel, channel: int) -> np.ndarray:
        return uniform(np.uint64(self.seed), group, pixel, channel)
