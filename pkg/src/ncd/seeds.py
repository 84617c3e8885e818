"""Seed derivation: one root seed fans out to named, independent streams.

Every source of randomness in a run (data generation, batch order,
augmentation, part sampling, parameter init, k-means restarts) draws from a
stream obtained as ``stream_rng(root_seed, name)``. The child seed is the
first 8 bytes of SHA-256 over ``"{root_seed}:{name}"``, so equal roots yield
equal streams and distinct names decorrelate.
"""

import hashlib

import numpy as np


def stream_seed(root_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(root_seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, name))
