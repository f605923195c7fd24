"""Simple descriptors for corpus filtering: weight, rings, rotatable bonds."""

from __future__ import annotations

from dataclasses import dataclass, field

from molmech.smiles.graph import MolGraph
from molmech.smiles.rings import ring_bond_keys, ring_count

ATOMIC_MASS = {
    "H": 1.01, "B": 10.81, "C": 12.01, "N": 14.01, "O": 16.00, "F": 19.00,
    "P": 30.97, "S": 32.07, "Cl": 35.45, "Br": 79.90, "I": 126.90,
}


def molecular_weight(graph: MolGraph) -> float:
    return sum(ATOMIC_MASS[a.element] + a.hcount * ATOMIC_MASS["H"] for a in graph.atoms)


def rotatable_bonds(graph: MolGraph) -> int:
    """Non-ring single bonds between heavy atoms that both have degree >= 2."""
    rings = ring_bond_keys(graph)
    n = 0
    for bd in graph.bonds:
        if bd.order != 1:
            continue
        key = (bd.a, bd.b) if bd.a < bd.b else (bd.b, bd.a)
        if key in rings:
            continue
        if graph.degree(bd.a) >= 2 and graph.degree(bd.b) >= 2:
            n += 1
    return n


@dataclass
class CorpusFilter:
    mw_range: tuple[float, float] = (150.0, 500.0)
    ring_range: tuple[int, int] = (1, 6)
    max_rotatable: int = 10
    allowed_elements: frozenset[str] = field(
        default_factory=lambda: frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
    )

    def __post_init__(self) -> None:
        self.mw_range = tuple(self.mw_range)
        self.ring_range = tuple(self.ring_range)
        self.allowed_elements = frozenset(self.allowed_elements)
        if self.mw_range[0] > self.mw_range[1] or self.ring_range[0] > self.ring_range[1]:
            raise ValueError("filter ranges must be non-empty")

    def reason(self, graph: MolGraph) -> str | None:
        """Why ``graph`` is rejected, or None when it passes."""
        if any(a.element not in self.allowed_elements for a in graph.atoms):
            return "element"
        mw = molecular_weight(graph)
        if not self.mw_range[0] <= mw <= self.mw_range[1]:
            return "mw"
        rc = ring_count(graph)
        if not self.ring_range[0] <= rc <= self.ring_range[1]:
            return "rings"
        if rotatable_bonds(graph) > self.max_rotatable:
            return "rotatable"
        return None

    def accepts(self, graph: MolGraph) -> bool:
        return self.reason(graph) is None
