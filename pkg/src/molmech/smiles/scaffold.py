"""Murcko scaffolds and hash-bucket scaffold splits."""

from __future__ import annotations

from typing import Sequence

from molmech.hashing import hash_text
from molmech.smiles.canon import canonicalize
from molmech.smiles.graph import MolGraph, build_graph, empty_graph, parse
from molmech.smiles.rings import ring_atoms

SPLITS = ("train", "val", "test")


def murcko_scaffold(graph: MolGraph) -> MolGraph:
    """Ring systems plus linkers: prune non-ring degree-1 atoms to a fixpoint."""
    rings = ring_atoms(graph)
    if not rings:
        return empty_graph()
    alive = [True] * graph.n_atoms
    degree = [graph.degree(i) for i in range(graph.n_atoms)]
    frontier = [i for i in range(graph.n_atoms) if degree[i] <= 1 and i not in rings]
    while frontier:
        v = frontier.pop()
        if not alive[v]:
            continue
        alive[v] = False
        for u, _ in graph.adjacency[v]:
            if alive[u]:
                degree[u] -= 1
                if degree[u] <= 1 and u not in rings:
                    frontier.append(u)
    keep = [i for i in range(graph.n_atoms) if alive[i]]
    remap = {old: new for new, old in enumerate(keep)}
    atoms = [
        (a.element, a.aromatic, a.charge, a.hcount if a.bracket else None)
        for a in (graph.atoms[i] for i in keep)
    ]
    bonds = [(remap[b.a], remap[b.b], b.order) for b in graph.bonds if alive[b.a] and alive[b.b]]
    return build_graph(atoms, bonds)


def scaffold_smiles(smiles: str) -> str:
    return canonicalize(murcko_scaffold(parse(smiles)))


def scaffold_bucket(scaffold_text: str, seed: int, resolution: int = 10_000) -> int:
    return hash_text(scaffold_text, seed) % resolution


def scaffold_split(
    corpus: Sequence[str],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    resolution: int = 10_000,
) -> list[str]:
    """Assign each SMILES to train/val/test by a hash bucket of its canonical scaffold."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    cut_train = ratios[0] * resolution
    cut_val = (ratios[0] + ratios[1]) * resolution
    cache: dict[str, str] = {}
    out = []
    for smi in corpus:
        scaf = scaffold_smiles(smi)
        split = cache.get(scaf)
        if split is None:
            b = scaffold_bucket(scaf, seed, resolution)
            split = "train" if b < cut_train else ("val" if b < cut_val else "test")
            cache[scaf] = split
        out.append(split)
    return out
