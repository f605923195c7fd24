"""Morgan (ECFP-style) circular fingerprints and Tanimoto similarity."""

from __future__ import annotations

from dataclasses import dataclass

from molmech.hashing import hash_ints
from molmech.smiles.errors import WidthMismatch
from molmech.smiles.graph import ATOMIC_NUMBER, MolGraph
from molmech.smiles.rings import ring_atoms


@dataclass(frozen=True, slots=True)
class Fingerprint:
    bits: int  # bitset, bit k set <=> feature folded to k
    nbits: int = 2048
    radius: int = 2

    @property
    def popcount(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        out, b, k = [], self.bits, 0
        while b:
            if b & 1:
                out.append(k)
            b >>= 1
            k += 1
        return out

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes(self.nbits // 8, "little")

    @classmethod
    def from_bytes(cls, data: bytes, radius: int = 2) -> "Fingerprint":
        return cls(int.from_bytes(data, "little"), len(data) * 8, radius)

    @classmethod
    def from_indices(cls, indices, nbits: int = 2048, radius: int = 2) -> "Fingerprint":
        b = 0
        for i in indices:
            b |= 1 << i
        return cls(b, nbits, radius)


def atom_environment_ids(graph: MolGraph, radius: int = 2) -> list[list[int]]:
    """Environment identifiers per iteration: ``ids[r][atom]`` for r = 0..radius."""
    in_ring = ring_atoms(graph)
    adj = graph.adjacency
    ids = [
        hash_ints((ATOMIC_NUMBER[a.element], len(adj[i]), a.hcount, a.charge, int(a.aromatic), int(i in in_ring)))
        for i, a in enumerate(graph.atoms)
    ]
    layers = [ids]
    for r in range(1, radius + 1):
        prev = layers[-1]
        nxt = []
        for i in range(graph.n_atoms):
            env = sorted((o, prev[j]) for j, o in adj[i])
            flat = [r, prev[i]]
            for o, h in env:
                flat.append(o)
                flat.append(h)
            nxt.append(hash_ints(flat))
        layers.append(nxt)
    return layers


def morgan_fingerprint(graph: MolGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if nbits <= 0 or nbits & (nbits - 1):
        raise ValueError("nbits must be a power of two")
    mask = nbits - 1
    bits = 0
    for layer in atom_environment_ids(graph, radius):
        for h in layer:
            bits |= 1 << (h & mask)
    return Fingerprint(bits, nbits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.nbits != b.nbits:
        raise WidthMismatch(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


def mean_pairwise_tanimoto(fps: list[Fingerprint]) -> float | None:
    """Mean over unordered pairs; None when fewer than two fingerprints."""
    n = len(fps)
    if n < 2:
        return None
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += tanimoto(fps[i], fps[j])
    return total / (n * (n - 1) / 2)
