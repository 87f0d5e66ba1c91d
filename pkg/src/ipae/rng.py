"""Seeded randomness.

Every stochastic piece of a run (data generation, weight init, per-step
noise, partner selection, shuffles) draws from a ``RunRng`` seeded by the
experiment config. Nothing in the package touches global RNG state or
wall-clock entropy, so a run is a pure function of its seed.

Standard-normal draws go through Box-Muller on top of the generator's
uniform stream; the consumption order is fixed, which makes runs
bit-reproducible on a given platform.
"""

from __future__ import annotations

import numpy as np


class RunRng:
    """A seeded random stream for one run.

    Uniform variates come from a PCG64 generator; normal variates are
    produced from consecutive uniform pairs via Box-Muller. ``u1`` is
    mapped to (0, 1] so the log never sees zero.
    """

    def __init__(self, seed):
        self.gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return low + (high - low) * self.gen.random(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard-normal array of the given shape (Box-Muller)."""
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = 1.0 - self.gen.random(half)
        u2 = self.gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * half)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self.gen.integers(low, high, size=shape)
