"""Counter-based random streams.

Every unit of work (entity, day, purpose, ...) gets its own Philox generator
keyed by the run seed plus a tuple of integers, so results do not depend on
the order or the number of workers that process the units.
"""

import zlib

import numpy as np


def _as_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    # strings (entity ids, purposes) are hashed to a stable 32-bit integer
    return zlib.crc32(str(key).encode("utf-8"))


def stream(seed, *keys):
    """Return an independent ``np.random.Generator`` for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_as_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
