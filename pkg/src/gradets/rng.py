"""Seeded, splittable random streams.

Every stochastic function takes an explicit ``numpy.random.Generator``.
Named substreams come from ``SeedSequence`` spawn keys, so consuming one
stream never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Generator for ``seed`` and a path of substream names (strings or ints)."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(seq))


def split(rng: np.random.Generator, n: int) -> list:
    """``n`` independent child generators of ``rng`` (advances ``rng``'s seed sequence)."""
    return list(rng.spawn(n))
