"""Counter-based random streams keyed by (seed, experiment, draw index, ...).

Each key tuple maps to its own Philox stream, so the draws seen by one sweep
point never depend on how many other points ran before it or in which order.
"""

from __future__ import annotations

import zlib

import numpy as np

DEFAULT_SEED = 20240611


def _word(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode())


def stream(seed, *keys) -> np.random.Generator:
    """Independent generator for ``keys`` under ``seed`` (None means the default seed)."""
    seed = DEFAULT_SEED if seed is None else int(seed)
    ss = np.random.SeedSequence(entropy=seed & ((1 << 64) - 1), spawn_key=tuple(_word(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
