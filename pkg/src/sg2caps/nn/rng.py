"""Seeded random streams and parameter initialisation."""
from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; numpy guarantees the bit stream for a given seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(seed: int, *tags: int | str) -> int:
    """Stable child seed for an independent stream (init, shuffle, sampling...)."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            raw = t.encode()
            # length prefix keeps ("ab", "c") apart from ("a", "bc")
            words += [len(raw), int.from_bytes(raw, "little")]
        else:
            words.append(int(t) & 0xFFFFFFFFFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)
