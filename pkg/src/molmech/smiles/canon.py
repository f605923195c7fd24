"""SMILES writing: canonical and randomized renderings of a :class:`MolGraph`.

Canonical ranks come from Morgan-style iterative refinement (initial invariant:
atomic number, aromaticity, charge, heavy degree, hydrogen count), followed by
an individualisation-refinement search over residual ties.  Ties between atoms
that refinement cannot separate are resolved by trying every member of the
first tied cell and keeping the lexicographically smallest output string, with
branches pruned by automorphisms discovered along the way.  Plain index-order
tie breaking is not invariant for graphs whose refined cells are not orbits,
so it is not used.

The writer runs a depth-first traversal from the lowest-ranked atom and visits
neighbours in rank order; randomize() reuses it with a seeded random ranking.
"""

from __future__ import annotations

import random
from typing import Sequence

from molmech.smiles.graph import (
    AROMATIC,
    ATOMIC_NUMBER,
    MolGraph,
    bond_units,
    implicit_hydrogens,
)

_BOND_TEXT = {1: "", 2: "=", 3: "#", AROMATIC: ""}


def _dense(keys: Sequence) -> list[int]:
    index = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [index[k] for k in keys]


def initial_invariants(graph: MolGraph) -> list[int]:
    adj = graph.adjacency
    keys = [
        (ATOMIC_NUMBER[a.element], a.aromatic, a.charge, len(adj[i]), a.hcount)
        for i, a in enumerate(graph.atoms)
    ]
    return _dense(keys)


def refine(adj, ranks: list[int]) -> list[int]:
    """Iterate neighbour-rank multisets until the partition stops splitting."""
    n_classes = len(set(ranks))
    n = len(ranks)
    while n_classes < n:
        keys = [(ranks[i], tuple(sorted((ranks[j], o) for j, o in adj[i]))) for i in range(n)]
        new = _dense(keys)
        k = max(new) + 1
        if k == n_classes:
            break
        ranks, n_classes = new, k
    return ranks


def _atom_text(graph: MolGraph, i: int, bond_sum: int) -> str:
    a = graph.atoms[i]
    sym = a.element.lower() if a.aromatic else a.element
    if a.charge == 0 and a.hcount == implicit_hydrogens(a.element, a.aromatic, bond_sum):
        return sym
    parts = ["[", sym]
    if a.hcount:
        parts.append("H" if a.hcount == 1 else f"H{a.hcount}")
    if a.charge:
        sign = "+" if a.charge > 0 else "-"
        parts.append(sign if abs(a.charge) == 1 else f"{sign}{abs(a.charge)}")
    parts.append("]")
    return "".join(parts)


def _bond_text(graph: MolGraph, i: int, j: int, order: int) -> str:
    if order == 1:
        ai, aj = graph.atoms[i], graph.atoms[j]
        return "-" if (ai.aromatic and aj.aromatic) else ""
    if order == AROMATIC:
        ai, aj = graph.atoms[i], graph.atoms[j]
        return "" if (ai.aromatic and aj.aromatic) else ":"
    return _BOND_TEXT[order]


def _ring_label(d: int) -> str:
    return str(d) if d < 10 else f"%{d:02d}"


def write_smiles(graph: MolGraph, ranks: Sequence[int]) -> tuple[str, list[int]]:
    """Render ``graph`` by DFS from the lowest rank, visiting neighbours by rank.

    Returns the SMILES text and the atom indices in output order.
    """
    n = graph.n_atoms
    if n == 0:
        return "", []
    adj = graph.adjacency
    bond_sum = [sum(bond_units(o) for _, o in adj[i]) for i in range(n)]
    nbrs = [sorted(adj[i], key=lambda t: ranks[t[0]]) for i in range(n)]
    root = min(range(n), key=lambda i: ranks[i])

    visited = [False] * n
    children: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    ring_open: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # at ancestor: (descendant, order)
    ring_close: list[list[int]] = [[] for _ in range(n)]  # at descendant: ancestors, in discovery order
    seen_ring: set[tuple[int, int]] = set()
    order: list[int] = []

    # iterative DFS to stay clear of the recursion limit on long chains
    stack: list[tuple[int, int, int]] = [(root, -1, 0)]
    visited[root] = True
    order.append(root)
    while stack:
        v, parent, k = stack[-1]
        if k == len(nbrs[v]):
            stack.pop()
            continue
        stack[-1] = (v, parent, k + 1)
        u, o = nbrs[v][k]
        if u == parent:
            continue
        if visited[u]:
            key = (u, v) if u < v else (v, u)
            if key not in seen_ring:
                seen_ring.add(key)
                ring_open[u].append((v, o))
                ring_close[v].append(u)
            continue
        visited[u] = True
        order.append(u)
        children[v].append((u, o))
        stack.append((u, v, 0))

    position = {a: p for p, a in enumerate(order)}
    out: list[str] = []
    free_digits = list(range(1, 100))
    digit_of: dict[tuple[int, int], int] = {}
    bond_order_of: dict[tuple[int, int], int] = {}
    for u in range(n):
        for v, o in ring_open[u]:
            bond_order_of[(u, v)] = o

    emit_stack: list = [("atom", root)]
    while emit_stack:
        item = emit_stack.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        _, v = item
        out.append(_atom_text(graph, v, bond_sum[v]))
        # closures first so their digits can be reused by openings at this atom
        for u in sorted(ring_close[v], key=lambda a: digit_of[(a, v)]):
            d = digit_of.pop((u, v))
            out.append(_ring_label(d))
            free_digits.append(d)
            free_digits.sort()
        for w, o in sorted(ring_open[v], key=lambda t: position[t[0]]):
            d = free_digits.pop(0)
            digit_of[(v, w)] = d
            out.append(_bond_text(graph, v, w, o) + _ring_label(d))
        kids = children[v]
        pending: list = []
        for idx, (c, o) in enumerate(kids):
            btxt = _bond_text(graph, v, c, o)
            if idx < len(kids) - 1:
                pending.append("(" + btxt)
                pending.append(("atom", c))
                pending.append(")")
            else:
                pending.append(btxt)
                pending.append(("atom", c))
        emit_stack.extend(reversed(pending))
    return "".join(out), order


def _individualize(ranks: list[int], v: int) -> list[int]:
    return _dense([(r, 0 if i == v else 1) for i, r in enumerate(ranks)])


def _target_cell(ranks: list[int]) -> list[int] | None:
    cells: dict[int, list[int]] = {}
    for i, r in enumerate(ranks):
        cells.setdefault(r, []).append(i)
    for r in sorted(cells):
        if len(cells[r]) > 1:
            return cells[r]
    return None


class _Search:
    def __init__(self, graph: MolGraph):
        self.graph = graph
        self.adj = graph.adjacency
        self.best: tuple[str, list[int], list[int]] | None = None  # text, order, ranks
        self.generators: list[tuple[int, ...]] = []
        self.leaves = 0

    def run(self) -> None:
        ranks = refine(self.adj, initial_invariants(self.graph))
        self._visit(ranks, [])

    def _record_automorphism(self, order_a: list[int], order_b: list[int]) -> None:
        perm = [0] * len(order_a)
        for x, y in zip(order_a, order_b):
            perm[x] = y
        t = tuple(perm)
        if t != tuple(range(len(t))) and t not in self.generators:
            self.generators.append(t)

    def _visit(self, ranks: list[int], path: list[int]) -> None:
        cell = _target_cell(ranks)
        if cell is None:
            self.leaves += 1
            text, order = write_smiles(self.graph, ranks)
            if self.best is None or text < self.best[0]:
                self.best = (text, order, ranks)
            elif text == self.best[0]:
                self._record_automorphism(self.best[1], order)
            return
        explored: list[int] = []
        for v in cell:
            if explored and self._same_orbit(v, explored, path):
                continue
            explored.append(v)
            self._visit(refine(self.adj, _individualize(ranks, v)), path + [v])

    def _same_orbit(self, v: int, explored: list[int], path: list[int]) -> bool:
        gens = [g for g in self.generators if all(g[p] == p for p in path)]
        if not gens:
            return False
        parent = list(range(self.graph.n_atoms))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for g in gens:
            for x, y in enumerate(g):
                rx, ry = find(x), find(y)
                if rx != ry:
                    parent[rx] = ry
        rv = find(v)
        return any(find(u) == rv for u in explored)


def canonical_ranks(graph: MolGraph) -> list[int]:
    """A total atom ranking that is invariant under input atom order."""
    if graph.n_atoms == 0:
        return []
    s = _Search(graph)
    s.run()
    assert s.best is not None
    return s.best[2]


def canonicalize(graph: MolGraph) -> str:
    """Deterministic SMILES text, identical for every rendering of the same graph."""
    if graph.n_atoms == 0:
        return ""
    s = _Search(graph)
    s.run()
    assert s.best is not None
    return s.best[0]


def randomize(graph: MolGraph, seed: int) -> str:
    """A valid SMILES for ``graph`` with root and neighbour order drawn from ``seed``."""
    if graph.n_atoms == 0:
        return ""
    ranks = list(range(graph.n_atoms))
    random.Random(seed).shuffle(ranks)
    return write_smiles(graph, ranks)[0]


def canonical_smiles(smiles: str) -> str:
    from molmech.smiles.graph import parse

    return canonicalize(parse(smiles))
