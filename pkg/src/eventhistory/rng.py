"""Seed splitting.

Every random stream is derived from one 64-bit root seed, a component label
and an integer index, so no global RNG state is ever consulted::

    stream(seed, "path", 17)  ->  Generator(PCG64(SeedSequence(seed, spawn_key=(crc32("path"), 17))))
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, label, *index)``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1),
                                spawn_key=(_label_key(label),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, label: str, *index: int) -> int:
    """A derived 64-bit seed, for handing to components that take an int seed."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1),
                                spawn_key=(_label_key(label),) + tuple(int(i) for i in index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
