from typing import List

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """Single splitmix64 output for the given 64-bit state (state already advanced)."""
    z = state & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seeds(root_seed: int, count: int) -> List[int]:
    """
    Derive `count` independent 64-bit task seeds from a root seed.

    The k-th seed (k starting at 1) is splitmix64(root + k * golden_gamma), so the
    sequence only depends on the root seed and each task can be scheduled in any order.
    """
    return [splitmix64((root_seed + k * _GOLDEN_GAMMA) & _MASK64) for k in range(1, count + 1)]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & _MASK64)
