"""Ring perception helpers: ring bonds (non-bridges), ring atoms, cycle rank."""

from __future__ import annotations

from molmech.smiles.graph import MolGraph


def ring_bond_keys(graph: MolGraph) -> set[tuple[int, int]]:
    """Bonds that lie on at least one cycle, as sorted atom pairs."""
    n = graph.n_atoms
    adj = graph.adjacency
    disc = [-1] * n
    low = [0] * n
    bridges: set[tuple[int, int]] = set()
    t = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = t
        t += 1
        stack = [(root, -1, 0)]
        while stack:
            v, parent, k = stack[-1]
            if k < len(adj[v]):
                stack[-1] = (v, parent, k + 1)
                u = adj[v][k][0]
                if u == parent:
                    continue
                if disc[u] == -1:
                    disc[u] = low[u] = t
                    t += 1
                    stack.append((u, v, 0))
                else:
                    low[v] = min(low[v], disc[u])
            else:
                stack.pop()
                if parent >= 0:
                    low[parent] = min(low[parent], low[v])
                    if low[v] > disc[parent]:
                        bridges.add((parent, v) if parent < v else (v, parent))
    out = set()
    for bd in graph.bonds:
        key = (bd.a, bd.b) if bd.a < bd.b else (bd.b, bd.a)
        if key not in bridges:
            out.add(key)
    return out


def ring_atoms(graph: MolGraph) -> set[int]:
    atoms: set[int] = set()
    for a, b in ring_bond_keys(graph):
        atoms.add(a)
        atoms.add(b)
    return atoms


def ring_count(graph: MolGraph) -> int:
    """Cycle rank (size of the smallest set of smallest rings) of a connected graph."""
    if graph.n_atoms == 0:
        return 0
    return len(graph.bonds) - graph.n_atoms + 1
