"""Substructure patterns (a SMARTS subset) and subgraph-monomorphism matching.

Supported pattern syntax: organic-subset element symbols with case encoding
aromatic/aliphatic, the ``*`` wildcard, bracket atoms carrying an exact
hydrogen count and/or charge (``[CH3]``, ``[nH]``, ``[N+]``), explicit bonds
``- = # :`` plus ``~`` (any bond), branches and ring-closure digits.  An
unwritten bond matches single or aromatic, as in SMARTS.
"""

from __future__ import annotations

from dataclasses import dataclass

from molmech.smiles.graph import AROMATIC, MolGraph, _scan
from molmech.smiles.tokens import BRACKET_ATOM, tokenize

ANY_BOND = -1
SINGLE_OR_AROMATIC = 0


@dataclass(frozen=True, slots=True)
class PatternAtom:
    element: str  # "*" for wildcard
    aromatic: bool | None  # None: either
    charge: int | None = None
    hcount: int | None = None

    def matches(self, atom) -> bool:
        if self.element != "*" and atom.element != self.element:
            return False
        if self.aromatic is not None and atom.aromatic != self.aromatic:
            return False
        if self.charge is not None and atom.charge != self.charge:
            return False
        if self.hcount is not None and atom.hcount != self.hcount:
            return False
        return True


@dataclass(frozen=True)
class FragmentPattern:
    name: str
    text: str
    atoms: tuple[PatternAtom, ...]
    bonds: tuple[tuple[int, int, int], ...]  # (a, b, order constraint)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True, slots=True)
class FragmentMatch:
    atoms: tuple[int, ...]  # sorted graph atom indices
    tokens: tuple[int, ...]  # sorted token positions (atoms plus bond/ring tokens inside the match)


def compile_pattern(text: str, name: str = "") -> FragmentPattern:
    tokens = tokenize(text, pattern=True)
    st = _scan(tokens, pattern=True)
    atoms = []
    for i, el in enumerate(st.elements):
        is_bracket = tokens[st.atom_tok[i]].kind == BRACKET_ATOM
        aromatic = None if el == "*" else st.aromatic[i]
        atoms.append(
            PatternAtom(
                element=el,
                aromatic=aromatic,
                charge=st.charges[i] if is_bracket else None,
                hcount=st.explicit_h[i] if is_bracket else None,
            )
        )
    bonds = tuple((bd.a, bd.b, bd.order) for bd in st.bonds)
    return FragmentPattern(name or text, text, tuple(atoms), bonds)


def bond_matches(constraint: int, order: int) -> bool:
    if constraint == ANY_BOND:
        return True
    if constraint == SINGLE_OR_AROMATIC:
        return order == 1 or order == AROMATIC
    return constraint == order


def _pattern_order(pattern: FragmentPattern) -> tuple[list[int], list[list[tuple[int, int]]]]:
    """DFS visiting order of pattern atoms and, per atom, its (earlier atom, constraint) edges."""
    n = pattern.n_atoms
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for a, b, c in pattern.bonds:
        adj[a].append((b, c))
        adj[b].append((a, c))
    order, seen, stack = [], [False] * n, [0]
    while stack:
        v = stack.pop()
        if seen[v]:
            continue
        seen[v] = True
        order.append(v)
        for u, _ in reversed(adj[v]):
            if not seen[u]:
                stack.append(u)
    rank = {v: k for k, v in enumerate(order)}
    back = [[(u, c) for u, c in adj[v] if rank[u] < rank[v]] for v in range(n)]
    return order, back


def match_fragment(graph: MolGraph, pattern: FragmentPattern) -> list[FragmentMatch]:
    """All subgraph monomorphisms of ``pattern`` in ``graph``, deduplicated by atom set."""
    if pattern.n_atoms == 0 or graph.n_atoms == 0:
        return []
    order, back = _pattern_order(pattern)
    gadj = [dict(nbrs) for nbrs in graph.adjacency]
    mapping: dict[int, int] = {}
    used: set[int] = set()
    found: dict[frozenset, set[int]] = {}
    bond_tokens = {}
    for bd in graph.bonds:
        bond_tokens[(bd.a, bd.b)] = bd.tokens
        bond_tokens[(bd.b, bd.a)] = bd.tokens

    def record() -> None:
        atoms = frozenset(mapping.values())
        toks = found.setdefault(atoms, set())
        for g in atoms:
            t = graph.atoms[g].token
            if t >= 0:
                toks.add(t)
        for a, b, _ in pattern.bonds:
            toks.update(bond_tokens[(mapping[a], mapping[b])])

    def extend(k: int) -> None:
        if k == len(order):
            record()
            return
        p = order[k]
        patom = pattern.atoms[p]
        edges = back[p]
        if edges:
            anchor_p, _ = edges[0]
            candidates = gadj[mapping[anchor_p]].keys()
        else:
            candidates = range(graph.n_atoms)
        for g in candidates:
            if g in used or not patom.matches(graph.atoms[g]):
                continue
            ok = True
            for q, c in edges:
                o = gadj[g].get(mapping[q])
                if o is None or not bond_matches(c, o):
                    ok = False
                    break
            if not ok:
                continue
            mapping[p] = g
            used.add(g)
            extend(k + 1)
            used.discard(g)
            del mapping[p]

    extend(0)
    out = [FragmentMatch(tuple(sorted(a)), tuple(sorted(t))) for a, t in found.items()]
    out.sort(key=lambda m: m.atoms)
    return out
