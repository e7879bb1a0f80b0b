"""Named random substreams derived from a single experiment seed.

Every source of randomness in the package draws from `rng_for(seed, name,
*indices)` so that components (graph build, augmentation, init, shuffling)
can be varied independently while staying reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_for(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return a generator for the (seed, name, *indices) substream.

    The stream name is hashed with crc32, which is stable across platforms
    and Python versions.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    entropy.extend(int(i) & 0xFFFFFFFFFFFF for i in indices)
    return np.random.default_rng(entropy)
