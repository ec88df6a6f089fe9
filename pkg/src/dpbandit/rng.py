"""Random-number plumbing.

Every stochastic routine in the package takes an explicit generator so that
runs replay bit-for-bit and tests can inject :class:`ZeroNoiseRNG`.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int | np.random.SeedSequence | None = None) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators; the parent stream is advanced."""
    return rng.spawn(n)


class ZeroNoiseRNG:
    """Stand-in generator whose every noise draw is zero.

    Gaussian draws return their location, Bernoulli/binomial draws return 0
    and permutations are the identity.  Only the methods used by this package
    are provided.
    """

    def normal(self, loc=0.0, scale=1.0, size=None):
        if size is None:
            return np.asarray(loc, dtype=float) + 0.0 * np.asarray(scale, dtype=float)
        return np.broadcast_to(np.asarray(loc, dtype=float), size).copy()

    def binomial(self, n, p, size=None):
        shape = size if size is not None else np.broadcast(np.asarray(n), np.asarray(p)).shape
        return np.zeros(shape, dtype=np.int64)

    def permutation(self, x):
        if isinstance(x, (int, np.integer)):
            return np.arange(x)
        return np.array(x, copy=True)

    def spawn(self, n: int):
        return [ZeroNoiseRNG() for _ in range(n)]
