"""Capturing post-block residual activations for whole corpora."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from molmech.model.checkpoint import read_container, write_container
from molmech.model.state import ModelState
from molmech.model.train import pad_batch


@torch.no_grad()
def residuals_per_molecule(state: ModelState, sequences: Sequence[Sequence[int]], layers: Sequence[int],
                           batch_size: int = 128) -> dict[int, list[np.ndarray]]:
    """For each layer, one (len(seq), d_model) float32 array per sequence."""
    out: dict[int, list[np.ndarray]] = {l: [] for l in layers}
    top = max(layers)
    for i in range(0, len(sequences), batch_size):
        chunk = sequences[i:i + batch_size]
        x = pad_batch(chunk, state.vocab.pad_id)
        tr = state.model(x, capture_residuals=True, stop_at_layer=top)
        for l in layers:
            r = tr.residuals[l].numpy()
            for j, s in enumerate(chunk):
                out[l].append(r[j, : len(s)].copy())
    return out


def dump_activations(state: ModelState, sequences: Sequence[Sequence[int]], layers: Sequence[int],
                     path: str | Path, meta: dict | None = None) -> str:
    """Write ``layer{L}.resid_post`` (rows = tokens) plus a ``rows.tsv`` sidecar."""
    per = residuals_per_molecule(state, sequences, layers)
    tensors = {f"layer{l}.resid_post": np.concatenate(per[l], axis=0).astype(np.float32) for l in layers}
    mol = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(sequences)])
    pos = np.concatenate([np.arange(len(s), dtype=np.int64) for s in sequences])
    tensors["rows.molecule"] = mol
    tensors["rows.position"] = pos
    tensors["rows.token_id"] = np.concatenate([np.asarray(s, dtype=np.int64) for s in sequences])
    path = Path(path)
    with open(path.with_suffix(".rows.tsv"), "w", encoding="utf-8") as fh:
        fh.write("row\tmolecule\tposition\n")
        for r, (m, p) in enumerate(zip(mol.tolist(), pos.tolist())):
            fh.write(f"{r}\t{m}\t{p}\n")
    return write_container(path, "activations", {"layers": list(layers), **(meta or {})}, tensors)


def load_activations(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return read_container(path, kind="activations")
