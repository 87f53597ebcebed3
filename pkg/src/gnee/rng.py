"""Named, independent random streams derived from one run seed."""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for ``name`` under ``seed``.

    Streams for different names never share state, so adding dropout draws
    cannot shift the split or the initialization.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.Generator(np.random.PCG64(ss))
