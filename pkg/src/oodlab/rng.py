"""Seed derivation for every random draw in the package.

A user-facing seed is never handed to numpy directly. It is first mixed with a
per-purpose stream offset through splitmix64, so that e.g. weight init and
minibatch shuffling for the same split seed draw from unrelated streams.
"""

from __future__ import annotations

import enum

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Stream(enum.IntEnum):
    """Stream offsets. Changing these changes every generated artifact."""

    DATA = 1
    SPLIT = 2
    INIT = 3
    SHUFFLE = 4


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(next_state, output)``."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    state = (int(seed) * _GOLDEN + int(stream)) & _MASK64
    state, out = splitmix64(state)
    _, out2 = splitmix64(state ^ out)
    return out2


def make_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, stream)))
