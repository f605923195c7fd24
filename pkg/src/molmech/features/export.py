"""Molecule-level feature export: pooled SAE latents, pooled residuals, fingerprints."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from molmech.model.activations import residuals_per_molecule
from molmech.model.checkpoint import read_container, write_container
from molmech.model.state import ModelState
from molmech.smiles.fingerprint import morgan_fingerprint
from molmech.smiles.graph import try_parse


class LabelMismatch(ValueError):
    pass


@dataclass
class FeatureSet:
    smiles: list[str]
    labels: np.ndarray
    sae: np.ndarray  # max-pooled latents
    dense: np.ndarray  # mean-pooled residuals
    fingerprint: np.ndarray  # 0/1 Morgan bits
    layer: int

    def matrix(self, name: str) -> np.ndarray:
        if name not in ("sae", "dense", "fingerprint"):
            raise ValueError(f"unknown feature set {name!r}")
        return getattr(self, name)


def read_labels(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read ``smiles<TAB>value`` lines; a header line whose value is not numeric is skipped."""
    smiles, values = [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise LabelMismatch(f"{path}:{n}: expected smiles<TAB>value")
        try:
            values.append(float(parts[1]))
        except ValueError:
            if n == 1:
                continue
            raise LabelMismatch(f"{path}:{n}: value {parts[1]!r} is not a number") from None
        smiles.append(parts[0])
    return smiles, np.array(values)


@torch.no_grad()
def export_features(state: ModelState, sae, smiles: Sequence[str], labels: Sequence[float]) -> FeatureSet:
    if len(smiles) != len(labels):
        raise LabelMismatch(f"{len(smiles)} molecules but {len(labels)} labels")
    for s in smiles:
        if try_parse(s) is None:
            raise LabelMismatch(f"unparsable SMILES in label file: {s!r}")
        if len(state.vocab.encode(s)) > state.config.context_len:
            raise LabelMismatch(f"SMILES longer than the model context: {s!r}")
    layer = sae.layer if hasattr(sae, "layer") else 0
    model_sae = sae.sae if hasattr(sae, "sae") else sae
    seqs = [state.vocab.encode(s) for s in smiles]
    per = residuals_per_molecule(state, seqs, [layer])[layer]
    inner = [r[1:-1] for r in per]
    pooled_sae = np.stack([model_sae.encode(torch.as_tensor(r)).max(dim=0).values.numpy() for r in inner])
    dense = np.stack([r.mean(axis=0) for r in inner])
    fps = np.zeros((len(smiles), 2048), dtype=np.uint8)
    for i, s in enumerate(smiles):
        fps[i, morgan_fingerprint(try_parse(s)).on_bits()] = 1
    return FeatureSet(list(smiles), np.asarray(labels, dtype=np.float64), pooled_sae, dense, fps, layer)


def save_features(fs: FeatureSet, path: str | Path) -> str:
    return write_container(path, "features", {"smiles": fs.smiles, "layer": fs.layer},
                           {"labels": fs.labels, "sae": fs.sae.astype(np.float32),
                            "dense": fs.dense.astype(np.float32), "fingerprint": fs.fingerprint})


def load_features(path: str | Path) -> FeatureSet:
    meta, t = read_container(path, kind="features")
    return FeatureSet(meta["smiles"], t["labels"], t["sae"], t["dense"], t["fingerprint"], meta["layer"])
