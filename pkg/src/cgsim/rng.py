"""Seeded random streams.

Each replication ``r`` of a run with master seed ``s`` draws from a Philox
counter-based generator keyed by ``SeedSequence(entropy=s, spawn_key=(r,))``.
Philox output and numpy's float conversion are platform independent, so a
(seed, replication) pair always reproduces the same numbers.
"""
from __future__ import annotations

import numpy as np


def stream_seed(seed: int, stream) -> np.random.SeedSequence:
    """``stream`` is an int or a tuple of ints (replication, purpose, ...)."""
    key = tuple(int(x) for x in stream) if isinstance(stream, tuple) else (int(stream),)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def make_generator(seed: int, stream) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(stream_seed(seed, stream)))


class UniformStream:
    """Buffered U[0, 1) draws; calling the object returns the next float."""

    __slots__ = ("_gen", "_buf", "_pos", "_block", "drawn")

    def __init__(self, seed: int, stream=0, block: int = 1 << 15):
        self._gen = make_generator(seed, stream)
        self._block = block
        self._buf: list = []
        self._pos = 0
        self.drawn = 0

    def __call__(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.drawn += 1
        return u

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]``."""
        return lo + min(int(self() * (hi - lo + 1)), hi - lo)
