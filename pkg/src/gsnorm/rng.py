"""Seeded random streams.

Every stochastic step draws from its own stream derived from one 64-bit seed
and a purpose tag, so adding draws to one step never perturbs another.
"""

import zlib

import numpy as np


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``purpose`` under ``seed``."""
    key = [zlib.crc32(purpose.encode("utf-8"))] + [int(e) & 0xFFFFFFFF for e in extra]
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))
