"""Seeded counter-mode randomness.

Every random draw in the engine flows through a Philox generator keyed by
a (seed, *labels) tuple, so dealers, sharing masks and datasets are fully
reproducible and two processes can derive identical streams without
coordinating.
"""

import hashlib

import numpy as np


def derive_key(seed: int, *labels) -> np.ndarray:
    """Derive a 128-bit Philox key from a seed and a label path."""
    h = hashlib.blake2b(repr((int(seed),) + tuple(labels)).encode(), digest_size=16)
    return np.frombuffer(h.digest(), dtype=np.uint64)


def generator(seed: int, *labels) -> np.random.Generator:
    """Fresh deterministic generator for the given (seed, labels) stream."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *labels)))


def ring_uniform(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniform elements of Z mod 2^64 as a uint64 array."""
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    buf = gen.bytes(8 * n)
    return np.frombuffer(buf, dtype=np.uint64).reshape(shape).copy()
