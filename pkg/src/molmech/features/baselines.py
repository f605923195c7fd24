"""Dense baseline bases: principal components and seeded random rotations."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class RankDeficient(UserWarning):
    pass


@dataclass
class Basis:
    kind: str  # pca | random-rotation | dense
    matrix: np.ndarray  # (d, k), orthonormal columns
    center: np.ndarray  # (d,)
    explained_variance: np.ndarray | None = None


def pca_basis(acts: np.ndarray, k: int | None = None) -> Basis:
    """Top-k covariance eigenvectors; each is signed so its largest-magnitude entry is positive."""
    x = np.asarray(acts, dtype=np.float64)
    n, d = x.shape
    k = d if k is None else k
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    center = x.mean(axis=0)
    cov = (x - center).T @ (x - center) / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    vals, vecs = vals[order], vecs[:, order]
    tol = vals.max() * d * np.finfo(np.float64).eps if vals.size else 0.0
    if np.any(vals <= tol):
        warnings.warn("activation covariance is rank deficient", RankDeficient, stacklevel=2)
    for j in range(k):
        i = np.argmax(np.abs(vecs[:, j]))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return Basis("pca", vecs, center, vals)


def random_rotation(d: int, seed: int = 0) -> Basis:
    """Haar-distributed orthogonal matrix from the QR decomposition of a Gaussian matrix."""
    rng = np.random.Generator(np.random.PCG64(seed))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    return Basis("random-rotation", q, np.zeros(d))


def dense_basis(d: int) -> Basis:
    return Basis("dense", np.eye(d), np.zeros(d))
