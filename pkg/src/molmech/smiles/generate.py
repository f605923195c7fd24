"""Constructive sampler for synthetic drug-like molecules.

Molecules are assembled from a ring library joined by short linkers and
decorated with common substituents.  Every bond is added only where the
target atom still carries a hydrogen, so each output is valence-correct by
construction and is emitted in canonical form.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from molmech.smiles.canon import canonicalize
from molmech.smiles.graph import allowed_max, build_graph, consumed_valence, parse

RINGS = (
    "c1ccccc1", "c1ccncc1", "c1cncnc1", "c1ccsc1", "c1ccoc1", "c1cc[nH]c1", "c1c[nH]cn1",
    "C1CCCCC1", "C1CCCC1", "C1CCNCC1", "C1COCCN1", "C1CNCCN1", "C1CC1", "C1CCOC1",
    "c1ccc2ccccc2c1", "c1ccc2[nH]ccc2c1",
)
RING_WEIGHTS = (6, 3, 2, 2, 2, 2, 1.5, 3, 2, 2, 2, 1.5, 1.5, 1.5, 1, 1)

# linkers join through their first atom and their last atom that still has a hydrogen
LINKERS = ("", "C", "CC", "O", "N", "S", "CO", "CN", "C(=O)N", "NC(=O)", "C(=O)", "S(=O)(=O)N", "NC(=O)N", "C=C")
LINKER_WEIGHTS = (4, 3, 2, 2, 2, 1, 1.5, 1.5, 3, 2, 1.5, 1, 1, 0.5)

# (fragment, attachment bond order); the fragment attaches through its first atom
SUBSTITUENTS = (
    ("C", 1), ("CC", 1), ("O", 1), ("N", 1), ("F", 1), ("Cl", 1), ("Br", 1), ("C#N", 1),
    ("C(=O)O", 1), ("C(=O)N", 1), ("OC", 1), ("C(F)(F)F", 1), ("C=O", 1), ("NC(=O)N", 1),
    ("S(=O)(=O)N", 1), ("[N+](=O)[O-]", 1), ("C(C)C", 1), ("C(C)(C)C", 1), ("C=C", 1),
    ("C#C", 1), ("SC", 1), ("N(C)C", 1), ("C(=O)C", 1), ("C(=O)OC", 1), ("NC(C)=O", 1),
    ("I", 1), ("=O", 2),
)
SUBSTITUENT_WEIGHTS = (
    6, 3, 3, 3, 3, 3, 1.5, 2, 2, 2, 2.5, 1.5, 1, 1, 1, 1, 1.5, 1, 1, 0.5, 1, 1.5, 1.5, 1, 1, 0.3, 1.5,
)


@dataclass
class _Frag:
    atoms: list[list]  # [element, aromatic, charge, explicit_h or None, free capacity]
    bonds: list[tuple[int, int, int]]


def _capacity(g, i: int) -> int:
    """Bond units atom ``i`` can still take: its hydrogens, plus spare valence for bracket atoms."""
    a = g.atoms[i]
    if not a.bracket:
        return a.hcount
    spare = allowed_max(a.element, a.charge) - consumed_valence(g, i) - (1 if a.aromatic and a.element == "C" else 0)
    return a.hcount + max(0, spare)


def _fragment(smiles: str) -> _Frag:
    g = parse(smiles)
    atoms = [[a.element, a.aromatic, a.charge, a.hcount if a.bracket else None, _capacity(g, i)]
             for i, a in enumerate(g.atoms)]
    return _Frag(atoms, [(b.a, b.b, b.order) for b in g.bonds])


def _tail(linker: _Frag) -> int:
    """Last linker atom that can still take a bond (the head when it is alone)."""
    return max((i for i in range(1, len(linker.atoms)) if linker.atoms[i][4] >= 1), default=0)


class MoleculeSampler:
    """Seeded sampler; ``sample()`` returns one canonical SMILES."""

    def __init__(self, seed: int = 0, max_atoms: int = 20):
        if max_atoms < 3:
            raise ValueError("max_atoms must be at least 3")
        self.rng = random.Random(seed)
        self.max_atoms = max_atoms
        self._rings = [_fragment(s) for s in RINGS]
        self._linkers = [_fragment(s) if s else None for s in LINKERS]
        self._subs = [(_fragment(s.lstrip("=")), o) for s, o in SUBSTITUENTS]

    def _pick(self, items, weights):
        return self.rng.choices(items, weights=weights, k=1)[0]

    def _attach(self, atoms, bonds, frag: _Frag, target: int, order: int, head: int = 0) -> int:
        """Append ``frag`` and bond its atom ``head`` to ``target``; returns the offset."""
        off = len(atoms)
        atoms.extend([list(a) for a in frag.atoms])
        bonds.extend((a + off, b + off, o) for a, b, o in frag.bonds)
        bonds.append((target, head + off, order))
        for idx in (target, head + off):
            atoms[idx][4] -= order
            if atoms[idx][3]:
                atoms[idx][3] = max(0, atoms[idx][3] - order)
        return off

    def _sites(self, atoms, need: int, aromatic_ok: bool = True) -> list[int]:
        return [i for i, a in enumerate(atoms) if a[4] >= need and (aromatic_ok or not a[1])]

    def sample(self) -> str:
        rng = self.rng
        n_rings = self._pick((1, 2, 3), (0.45, 0.42, 0.13))
        first = self._pick(self._rings, RING_WEIGHTS)
        atoms = [list(a) for a in first.atoms]
        bonds = list(first.bonds)
        for _ in range(n_rings - 1):
            ring = self._pick(self._rings, RING_WEIGHTS)
            linker = self._pick(self._linkers, LINKER_WEIGHTS)
            extra = len(ring.atoms) + (len(linker.atoms) if linker else 0)
            sites = self._sites(atoms, 1)
            if len(atoms) + extra > self.max_atoms or not sites:
                break
            target = rng.choice(sites)
            if linker is not None:
                off = self._attach(atoms, bonds, linker, target, 1)
                target = off + _tail(linker)
            ring_sites = [i for i, a in enumerate(ring.atoms) if a[4] >= 1]
            self._attach(atoms, bonds, ring, target, 1, head=rng.choice(ring_sites))
        for _ in range(rng.randint(0, 4)):
            frag, order = self._pick(self._subs, SUBSTITUENT_WEIGHTS)
            if frag.atoms[0][4] < order or len(atoms) + len(frag.atoms) > self.max_atoms:
                continue
            sites = self._sites(atoms, order, aromatic_ok=order == 1)
            if not sites:
                continue
            self._attach(atoms, bonds, frag, rng.choice(sites), order)
        graph = build_graph([(a[0], a[1], a[2], a[3]) for a in atoms], bonds)
        return canonicalize(graph)


def generate_corpus(n: int, max_atoms: int = 20, seed: int = 0, unique: bool = True) -> list[str]:
    """``n`` canonical SMILES; with ``unique`` duplicates are redrawn (bounded attempts)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sampler = MoleculeSampler(seed, max_atoms)
    out: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(out) < n:
        s = sampler.sample()
        attempts += 1
        if unique and s in seen and attempts < 20 * n:
            continue
        seen.add(s)
        out.append(s)
    return out
