"""Coverage-weighted standardized contrast (WSD) between fragment and non-fragment tokens.

For one molecule and one feature with values ``a_t`` over valid token
positions and a fragment covering a fraction ``p`` of them::

    WSD = (mean_in - mean_out) / (std_all + eps) * sqrt(p * (1 - p))

with ``std_all`` the population standard deviation over all valid tokens.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EPS = 1e-9


class NoMatches(UserWarning):
    pass


def wsd_single(values, mask, eps: float = EPS) -> float:
    v = np.asarray(values, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if v.size == 0:
        return 0.0
    p = m.mean()
    if p == 0.0 or p == 1.0:
        return 0.0
    return float((v[m].mean() - v[~m].mean()) / (v.std() + eps) * np.sqrt(p * (1 - p)))


def wsd_matrix(acts: np.ndarray, mask: np.ndarray, eps: float = EPS) -> np.ndarray:
    """WSD of every feature column of ``acts`` (tokens, features) for one mask."""
    a = np.asarray(acts, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    p = m.mean()
    if p == 0.0 or p == 1.0:
        return np.zeros(a.shape[1])
    contrast = a[m].mean(axis=0) - a[~m].mean(axis=0)
    return contrast / (a.std(axis=0) + eps) * np.sqrt(p * (1 - p))


@dataclass
class FragmentScores:
    name: str
    mean: np.ndarray  # per feature, mean WSD over molecules containing the fragment
    median: np.ndarray
    n_molecules: int

    def ranking(self) -> np.ndarray:
        """Feature indices by decreasing mean WSD (ties by index)."""
        return np.lexsort((np.arange(self.mean.size), -self.mean))


@dataclass
class WsdTable:
    basis: str
    aggregation: str = "mean"
    fragments: dict[str, FragmentScores] = field(default_factory=dict)
    no_matches: list[str] = field(default_factory=list)

    def top(self, name: str, k: int = 5) -> list[tuple[int, float]]:
        sc = self.fragments[name]
        return [(int(i), float(sc.mean[i])) for i in sc.ranking()[:k]]

    def max_specificity(self) -> dict[str, float]:
        return {n: float(sc.mean.max()) for n, sc in self.fragments.items()}


def screen(acts_per_molecule: Sequence[np.ndarray], masks: dict[str, Sequence[np.ndarray | None]],
           basis: str = "sae", eps: float = EPS) -> WsdTable:
    """Aggregate per-molecule WSD for each fragment.

    ``acts_per_molecule[i]`` holds features at molecule i's valid token
    positions; ``masks[name][i]`` marks the fragment's positions there (None
    when the fragment does not occur).  Fragments with no occurrence are
    listed in ``no_matches`` and a :class:`NoMatches` warning is issued.
    """
    table = WsdTable(basis)
    for name, per_mol in masks.items():
        scores = [wsd_matrix(acts_per_molecule[i], m, eps) for i, m in enumerate(per_mol)
                  if m is not None and np.any(m)]
        if not scores:
            table.no_matches.append(name)
            warnings.warn(f"fragment {name!r} has no matches", NoMatches, stacklevel=2)
            continue
        s = np.stack(scores)
        table.fragments[name] = FragmentScores(name, s.mean(axis=0), np.median(s, axis=0), len(scores))
    return table
