"""Deterministic seed fan-out.

``derive_seed(base, *keys)`` feeds the base seed and the CRC-32 of each
key's string form into :class:`numpy.random.SeedSequence` and returns the
first 63 bits of its state. The mapping depends only on its arguments, so
any scheduling order of independent jobs reproduces the same seeds.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base: int, *keys) -> int:
    words = [int(base) & 0xFFFFFFFFFFFFFFFF] + [zlib.crc32(str(k).encode("utf-8")) for k in keys]
    state = np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))
