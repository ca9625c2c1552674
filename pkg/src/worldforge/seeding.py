"""Deterministic seed derivation and RNG construction.

Every random decision in the pipeline draws from a generator keyed by a
64-bit hash of (user seed, context labels, entity indices).  Keyed streams
mean adding one entity never reshuffles the draws of any other.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix64(*parts: int | str) -> int:
    """Collapse integers and string labels into one 64-bit seed."""
    h = _GOLDEN
    for part in parts:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                h = _splitmix(h ^ b)
        else:
            h = _splitmix(h ^ (int(part) & _MASK64))
    return h


def rng(*parts: int | str) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by the mixed parts."""
    return np.random.Generator(np.random.Philox(key=mix64(*parts)))
