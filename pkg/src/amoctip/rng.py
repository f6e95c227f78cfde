"""Counter-based random streams keyed by (seed, realization index).

Each realization draws from its own Philox stream whose 128-bit key packs the
64-bit run seed and the realization index. Streams are stateless with respect
to scheduling, so results do not depend on worker count or execution order.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(seed: int, realization_index: int) -> int:
    seed, realization_index = int(seed), int(realization_index)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    if not 0 <= realization_index <= _MASK64:
        raise ValueError(f"realization_index must fit in 64 unsigned bits, got {realization_index}")
    return (realization_index << 64) | seed


def realization_stream(seed: int, realization_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, realization_index)))


def derived_generator(seed: int, *purpose: int | str) -> np.random.Generator:
    """Independent generator for auxiliary draws (splits, pseudo-tips, init)."""
    words = [seed]
    for item in purpose:
        if isinstance(item, str):
            item = int.from_bytes(item.encode(), "little") & _MASK64
        words.append(int(item))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
