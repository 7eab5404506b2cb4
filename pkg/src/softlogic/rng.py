"""Seeded random streams on a counter-based generator.

Every stochastic component draws from `stream(seed, *tags)`, a Philox
(64-bit, counter-based, splittable) generator keyed by the run seed plus a
purpose tag, so independent components never share or race a stream and
each one is reproducible in isolation.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]

_MASK = (1 << 64) - 1


def _fold(tags) -> int:
    h = 0xCBF29CE484222325
    for tag in tags:
        if isinstance(tag, str):
            data = tag.encode()
        else:
            data = int(tag).to_bytes(8, "little", signed=True)
        for byte in data:
            h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for (seed, purpose-tags)."""
    key = np.array([int(seed) & _MASK, _fold(tags)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
