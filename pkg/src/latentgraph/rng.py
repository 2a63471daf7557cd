"""Seeded random streams.

All randomness goes through :class:`RngStream`, a thin wrapper over numpy's
Philox4x64 counter-based bit generator.  A stream is keyed by an integer seed
and a path of names; ``substream("encoder")`` derives an independent stream
whose draws do not depend on how many numbers any other stream consumed.
"""
from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RngStream:
    def __init__(self, seed: int = 0, path: tuple[str, ...] = ()):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        seq = np.random.SeedSequence(self.seed, spawn_key=tuple(_name_key(p) for p in self.path))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def substream(self, name: str) -> "RngStream":
        return RngStream(self.seed, self.path + (name,))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    # thin pass-throughs used across the package
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)
