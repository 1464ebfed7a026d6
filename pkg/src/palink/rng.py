"""Deterministic seed splitting into named substreams.

Every randomized stage (channel draws, payload data, receiver noise,
predistorter training) pulls its generator from :func:`substream`, so any
stage can be re-run in isolation and parallel workers never share state.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *path) -> np.random.Generator:
    """Return an independent generator for ``seed`` and a stream path.

    Parameters
    ----------
    seed : int
        Experiment master seed (64-bit).
    *path
        Stream identifiers, e.g. ``("channel", realization_index)``.
        Strings are hashed; integers are used directly.

    The same (seed, path) pair always yields the same stream, and distinct
    paths yield statistically independent streams.
    """
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
