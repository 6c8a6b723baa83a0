"""Deterministic RNG substream derivation.

Every stochastic routine in the package draws from a generator derived from
(master seed, labels...). Labels are strings or non-negative ints; the same
(seed, labels) pair always yields the same stream, independent of call order
or thread schedule.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("rng labels must be non-negative")
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for the substream identified by (seed, labels...)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key_word(l) for l in labels))
    return np.random.default_rng(ss)
