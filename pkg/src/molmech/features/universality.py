"""Maximum cosine similarity (MCS) between two dictionaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from molmech.sae.evaluate import DimensionMismatch


@dataclass
class McsResult:
    mean_mcs: float
    recovery_rate: float
    random_baseline: float
    threshold: float
    per_column: np.ndarray


def _unit_columns(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return w / np.maximum(np.linalg.norm(w, axis=0, keepdims=True), 1e-12)


def max_cosine(small: np.ndarray, large: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """For each column of ``small`` (d, m1), its best cosine against the columns of ``large`` (d, m2)."""
    a, b = _unit_columns(small), _unit_columns(large)
    out = np.empty(a.shape[1])
    for i in range(0, a.shape[1], chunk):
        out[i:i + chunk] = (a[:, i:i + chunk].T @ b).max(axis=1)
    return out


def random_unit_columns(d: int, m: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return _unit_columns(rng.standard_normal((d, m)))


def mcs_universality(small: np.ndarray, large: np.ndarray, threshold: float = 0.9, seed: int = 0) -> McsResult:
    """MCS of decoder columns of ``small`` against ``large``, with a random-dictionary baseline."""
    if small.shape[0] != large.shape[0]:
        raise DimensionMismatch(f"dictionary widths differ: {small.shape[0]} vs {large.shape[0]}")
    per = max_cosine(small, large)
    rand = max_cosine(random_unit_columns(small.shape[0], small.shape[1], seed), large)
    return McsResult(float(per.mean()), float((per > threshold).mean()), float(rand.mean()), threshold, per)


def random_mcs_baseline(d: int, m_small: int, m_large: int, seed: int = 0) -> float:
    """Mean max-cosine between two independent sets of random unit vectors."""
    return float(max_cosine(random_unit_columns(d, m_small, seed), random_unit_columns(d, m_large, seed + 1)).mean())
