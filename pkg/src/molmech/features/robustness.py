"""Stability of SAE features under alternative SMILES renderings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from molmech.hashing import derive_seed
from molmech.model.activations import residuals_per_molecule
from molmech.model.state import ModelState
from molmech.smiles.canon import randomize
from molmech.smiles.graph import parse


@dataclass
class RobustnessRecord:
    molecule: int
    seed: int
    jaccard: float
    cosine: float
    layer: int
    sae_size: int
    variant: str


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    aa, bb = float(a @ a), float(b @ b)
    if aa == 0 and bb == 0:
        return 1.0
    if aa == 0 or bb == 0:
        return 0.0
    # sqrt(aa * bb) keeps identical vectors at exactly 1.0
    return float(np.clip(float(a @ b) / np.sqrt(aa * bb), -1.0, 1.0))


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def pooled(z_tokens: np.ndarray) -> tuple[np.ndarray, set[int]]:
    """Max-pooled vector and the set of latents active (> 0) at any position."""
    if z_tokens.shape[0] == 0:
        return np.zeros(z_tokens.shape[1]), set()
    return z_tokens.max(axis=0), set(np.flatnonzero((z_tokens > 0).any(axis=0)).tolist())


def compare(z_a: np.ndarray, z_b: np.ndarray) -> tuple[float, float]:
    pa, sa = pooled(z_a)
    pb, sb = pooled(z_b)
    return jaccard(sa, sb), cosine(pa, pb)


@torch.no_grad()
def robustness_eval(state: ModelState, sae, layer: int, smiles: Sequence[str], n_seeds: int = 1,
                    seed: int = 0) -> list[RobustnessRecord]:
    """Compare each canonical molecule with ``n_seeds`` randomized renderings of it."""
    renders, owners = [], []
    for mi, s in enumerate(smiles):
        g = parse(s)
        renders.append(s)
        owners.append((mi, -1))
        for k in range(n_seeds):
            sd = derive_seed(seed, mi, k)
            renders.append(randomize(g, sd))
            owners.append((mi, sd))
    ok = [len(state.vocab.encode(r)) <= state.config.context_len for r in renders]
    seqs = [state.vocab.encode(r) for r, good in zip(renders, ok) if good]
    per = iter(residuals_per_molecule(state, seqs, [layer])[layer])
    latents = {}
    for (mi, sd), good in zip(owners, ok):
        if good:
            r = next(per)
            latents[(mi, sd)] = sae.encode(torch.as_tensor(r[1:-1])).numpy()
    out = []
    for (mi, sd) in owners:
        if sd == -1 or (mi, sd) not in latents or (mi, -1) not in latents:
            continue
        j, c = compare(latents[(mi, -1)], latents[(mi, sd)])
        out.append(RobustnessRecord(mi, sd, j, c, layer, sae.m, "randomized"))
    return out
