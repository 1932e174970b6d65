"""Seeded random streams.

All simulation randomness comes from NumPy's ``PCG64`` bit generator seeded
through ``SeedSequence``. A stream is addressed by a root seed plus a tuple
of names; names are mapped to integers with a 64-bit BLAKE2b digest, so a
stream never depends on the order in which other streams were consumed.
"""
import hashlib
from typing import Union

import numpy as np

MASK64 = (1 << 64) - 1

Key = Union[str, int]


def stable_hash(name: str) -> int:
    """Platform-independent 64-bit hash of a string."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, name: str) -> int:
    """Child seed ``seed XOR stable_hash(name)``."""
    return (seed ^ stable_hash(name)) & MASK64


def make_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *keys)``."""
    entropy = [seed & MASK64]
    for key in keys:
        entropy.append(stable_hash(key) if isinstance(key, str) else key & MASK64)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
