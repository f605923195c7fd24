"""Fragment screening of SAE latents and dense baseline bases."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from molmech.features.baselines import Basis, dense_basis, pca_basis, random_rotation
from molmech.features.corpus import (TokenCorpus, fragment_masks, linear_projector, project,
                                     residual_features, sae_projector, token_corpus)
from molmech.features.wsd import WsdTable, screen
from molmech.model.state import ModelState
from molmech.smiles.fragments import FragmentPattern


def screen_fragments(state: ModelState, projector: Callable[[np.ndarray], np.ndarray], smiles: Sequence[str],
                     patterns: Sequence[FragmentPattern], layer: int, basis: str = "sae",
                     corpus: TokenCorpus | None = None, residuals: list[np.ndarray] | None = None) -> WsdTable:
    """WSD of every projected feature against every fragment pattern."""
    corpus = corpus or token_corpus(state, smiles)
    residuals = residuals if residuals is not None else residual_features(state, corpus, layer)
    return screen(project(residuals, projector), fragment_masks(corpus, patterns), basis=basis)


def specificity_benchmark(state: ModelState, sae, smiles: Sequence[str], patterns: Sequence[FragmentPattern],
                          layer: int, seed: int = 0, pca_rows: int | None = None) -> dict[str, WsdTable]:
    """Screen the SAE alongside dense, PCA and random-rotation bases of the same residuals."""
    corpus = token_corpus(state, smiles)
    residuals = residual_features(state, corpus, layer)
    masks = fragment_masks(corpus, patterns)
    stacked = np.concatenate(residuals, axis=0)
    if pca_rows is not None:
        stacked = stacked[:pca_rows]
    d = stacked.shape[1]
    bases: list[Basis] = [dense_basis(d), pca_basis(stacked), random_rotation(d, seed)]
    out = {"sae": screen(project(residuals, sae_projector(sae)), masks, basis="sae")}
    for b in bases:
        out[b.kind] = screen(project(residuals, linear_projector(b.matrix, b.center)), masks, basis=b.kind)
    return out


def specificity_rows(tables: dict[str, WsdTable]) -> list[dict]:
    """Long-format rows: best feature and its mean WSD per (basis, fragment)."""
    rows = []
    for basis, t in tables.items():
        for name, sc in t.fragments.items():
            k = int(sc.ranking()[0])
            rows.append({"basis": basis, "fragment": name, "best_feature": k, "max_wsd": float(sc.mean[k]),
                         "median_wsd_at_best": float(sc.median[k]), "n_molecules": sc.n_molecules})
    return rows
