"""Seedable random streams.

Every stochastic step in the package draws from a RandomStream created
from an explicit integer seed, so any run can be replayed exactly.  The
underlying generator is numpy's PCG64; substreams are derived through
SeedSequence so that independent pipeline stages never share draws.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

ALGORITHM = "pcg64"

_MASK64 = (1 << 64) - 1


class RandomStream:
    """A named, reproducible source of random draws.

    The generator state is PCG64 seeded from the entropy tuple
    ``(seed, len(key), *key)``.  The length prefix keeps the encoding
    injective: numpy's SeedSequence collapses trailing zero entropy
    words, so without it ``(seed,)`` and ``(seed, 0)`` would collide.

    Parameters
    ----------
    seed : int
        Root seed. Negative values are mapped to their unsigned 64-bit
        representation.
    key : int...
        Optional derivation path appended to the seed; ``substream``
        extends it by one element.
    """

    def __init__(self, seed: int, *key: int):
        self.seed = int(seed) & _MASK64
        self.key: Tuple[int, ...] = tuple(int(k) & _MASK64 for k in key)
        self.algorithm = ALGORITHM
        seq = np.random.SeedSequence((self.seed, len(self.key)) + self.key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, index: int) -> "RandomStream":
        """Derive an independent stream identified by ``index``."""
        return RandomStream(self.seed, *self.key, index)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: Optional[int] = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bernoulli(self, p: float, size=None) -> np.ndarray:
        return self._gen.random(size) < p

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def describe(self) -> dict:
        """Serializable identity of this stream (for artifact metadata)."""
        return {"algorithm": self.algorithm, "seed": self.seed, "key": list(self.key)}
