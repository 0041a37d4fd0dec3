"""Counter-based random streams keyed by ``(seed, stream name)``."""

import zlib

import numpy as np


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent Philox generator for one named stream.

    Each stream depends only on ``seed`` and its name, so any single stream
    can be regenerated without drawing the others.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = zlib.crc32(stream.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, key])
    return np.random.Generator(np.random.Philox(ss))
