"""Seed substreams: all randomness derives from one seed plus named keys."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *keys: str | int) -> np.random.Generator:
    """Generator for (seed, component name, record id, ...) substreams."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
