"""Token-level features and fragment masks for a corpus of SMILES."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from molmech.model.activations import residuals_per_molecule
from molmech.model.state import ModelState
from molmech.smiles.fragments import FragmentPattern, match_fragment
from molmech.smiles.graph import parse


@dataclass
class TokenCorpus:
    smiles: list[str]
    sequences: list[list[int]]
    n_tokens: list[int]  # SMILES tokens per molecule (valid positions are 1..n)


def token_corpus(state: ModelState, smiles: Sequence[str]) -> TokenCorpus:
    keep, seqs, lens = [], [], []
    for s in smiles:
        ids = state.vocab.encode(s)
        if len(ids) <= state.config.context_len:
            keep.append(s)
            seqs.append(ids)
            lens.append(len(ids) - 2)
    return TokenCorpus(keep, seqs, lens)


def fragment_masks(corpus: TokenCorpus, patterns: Sequence[FragmentPattern]) -> dict[str, list[np.ndarray | None]]:
    """Per pattern and molecule, a boolean mask over SMILES token positions (None if absent)."""
    out: dict[str, list[np.ndarray | None]] = {p.name: [] for p in patterns}
    for s, n in zip(corpus.smiles, corpus.n_tokens):
        g = parse(s)
        for p in patterns:
            matches = match_fragment(g, p)
            if not matches:
                out[p.name].append(None)
                continue
            m = np.zeros(n, dtype=bool)
            for mt in matches:
                m[list(mt.tokens)] = True
            out[p.name].append(m)
    return out


def residual_features(state: ModelState, corpus: TokenCorpus, layer: int) -> list[np.ndarray]:
    """Residuals at SMILES token positions (BOS and EOS dropped), one array per molecule."""
    per = residuals_per_molecule(state, corpus.sequences, [layer])[layer]
    return [r[1:1 + n] for r, n in zip(per, corpus.n_tokens)]


def project(features: Sequence[np.ndarray], fn: Callable[[np.ndarray], np.ndarray]) -> list[np.ndarray]:
    return [fn(f) for f in features]


def sae_projector(sae) -> Callable[[np.ndarray], np.ndarray]:
    def fn(x: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return sae.encode(torch.as_tensor(x, dtype=torch.float32)).numpy()
    return fn


def linear_projector(matrix: np.ndarray, center: np.ndarray | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Coordinates of (x - center) in the columns of ``matrix``."""
    c = np.zeros(matrix.shape[0]) if center is None else center

    def fn(x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - c) @ matrix
    return fn
