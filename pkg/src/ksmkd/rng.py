"""Seeded, splittable random streams.

Every stream is a Philox-4x64-10 counter-based generator keyed by
``SeedSequence(seed, spawn_key=stream_key)``.  Components (data shuffling,
initialization, dropout, action sampling) each draw from their own named
stream, so adding draws in one component never shifts another.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "philox4x64-10"


def stream_key(*names) -> tuple[int, ...]:
    key = []
    for name in names:
        if isinstance(name, (int, np.integer)):
            key.append(int(name))
        else:
            key.append(zlib.crc32(str(name).encode("utf-8")))
    return tuple(key)


def make_rng(seed: int, *names) -> np.random.Generator:
    """Return the generator for stream ``names`` under ``seed``."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=stream_key(*names))
    return np.random.Generator(np.random.Philox(ss))
