"""Fixed 64-bit hashing used for fingerprints, scaffold buckets and seed splitting.

All functions are pure integer arithmetic so results are identical across
platforms and Python versions (no reliance on ``hash()``).
"""

from __future__ import annotations

import hashlib
from typing import Iterable

MASK64 = 0xFFFFFFFFFFFFFFFF

# splitmix64 constants
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# FNV-1a 64
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective avalanche on 64-bit integers."""
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & MASK64
    return x ^ (x >> 31)


def hash_ints(values: Iterable[int], seed: int = 0) -> int:
    """Order-sensitive hash of a sequence of (possibly negative) integers."""
    h = mix64(seed & MASK64)
    for v in values:
        h = mix64(h ^ (v & MASK64))
    return h


def hash_bytes(data: bytes, seed: int = 0) -> int:
    """FNV-1a over ``data`` followed by a splitmix64 finalizer keyed by ``seed``."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return mix64(h ^ mix64(seed & MASK64))


def hash_text(text: str, seed: int = 0) -> int:
    return hash_bytes(text.encode("utf-8"), seed)


def derive_seed(master: int, *keys: int) -> int:
    """Seed splitter: child seed for (master, key...) as a 63-bit non-negative int."""
    return hash_ints(keys, seed=master) >> 1


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
