"""Named random streams derived from a single master seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("dataset", "pretrain", "buffer", "train", "eval", "analysis")


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *path: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *path)``.

    The same arguments always yield the same stream; different names or
    paths yield statistically independent streams.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (_name_key(name), *(int(p) for p in path))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
