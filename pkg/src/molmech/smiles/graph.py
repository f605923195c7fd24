"""Molecular graphs, SMILES parsing and valence bookkeeping.

Valence model
-------------
``allowed_max`` is the highest bond-order budget the engine accepts for an
element/charge pair (B 3, C 4, N 3, O 2, P 5, S 6, halogens 1; charges shift
group 15/16 elements by ``+charge`` and reduce the others by ``|charge|``).

Aromatic bonds count one unit toward consumption.  Every aromatic atom reserves
one further unit for delocalisation when *reporting* remaining valence, so a
ring carbon of benzene has ``4 - 2 - 1 = 1`` left.  For *validity* only
aromatic carbon and boron must be able to pay that reserve; aromatic N/O/S/P
may instead donate a lone pair (pyrrole ``[nH]``, furan ``o``, thiophene ``s``).
This is a heuristic in place of kekulisation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from molmech.smiles import errors as E
from molmech.smiles.tokens import (
    ATOM,
    BOND,
    BRACKET_ATOM,
    OPEN_PAREN,
    RING_DIGIT,
    Token,
    tokenize,
)

AROMATIC = 4  # bond order code for aromatic bonds

ATOMIC_NUMBER = {"B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "P": 15, "S": 16, "Cl": 17, "Br": 35, "I": 53}
ORGANIC_SUBSET = frozenset(ATOMIC_NUMBER)
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S"})
_BASE_MAX = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 5, "S": 6, "F": 1, "Cl": 1, "Br": 1, "I": 1}
_NORMAL_VALENCES = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
_PI_DONORS = frozenset({"B", "C", "N", "P"})  # aromatic atoms that contribute one pi unit
_RESERVE_REQUIRED = frozenset({"B", "C"})

BOND_SYMBOL_ORDER = {"-": 1, "=": 2, "#": 3, ":": AROMATIC, "/": 1, "\\": 1}

_BRACKET_RE = re.compile(
    r"^\[(?P<iso>[0-9]+)?(?P<sym>[A-Z][a-z]?|[a-z][a-z]?|\*)(?P<chiral>@@?)?"
    r"(?P<h>H[0-9]?)?(?P<chg>\+\+|--|[+-][0-9]?)?(?::[0-9]+)?\]$"
)


@dataclass(frozen=True, slots=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    hcount: int = 0  # total hydrogens (explicit for bracket atoms, implicit otherwise)
    bracket: bool = False  # hydrogens were stated explicitly
    token: int = -1  # index of the atom's token, -1 for built graphs


@dataclass(frozen=True, slots=True)
class Bond:
    a: int
    b: int
    order: int  # 1, 2, 3 or AROMATIC
    tokens: tuple[int, ...] = ()  # explicit bond symbol / ring digit token indices
    formed_at: int = -1  # token index at which both endpoints are known


@dataclass(frozen=True, slots=True)
class GrammarEvent:
    kind: str  # "ring" | "branch"
    open_pos: int
    close_pos: int
    batch_id: int = 0


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    tokens: tuple[Token, ...] = ()
    events: tuple[GrammarEvent, ...] = ()
    adjacency: tuple[tuple[tuple[int, int], ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for bd in self.bonds:
            adj[bd.a].append((bd.b, bd.order))
            adj[bd.b].append((bd.a, bd.order))
        object.__setattr__(self, "adjacency", tuple(tuple(x) for x in adj))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_between(self, i: int, j: int) -> Bond | None:
        for bd in self.bonds:
            if (bd.a == i and bd.b == j) or (bd.a == j and bd.b == i):
                return bd
        return None


def bond_units(order: int) -> int:
    return 1 if order == AROMATIC else order


def allowed_max(element: str, charge: int = 0) -> int:
    if element not in _BASE_MAX:
        raise E.UnsupportedElement(f"unsupported element {element!r}")
    base = _BASE_MAX[element]
    if element in ("N", "O", "P", "S"):
        return max(0, base + charge)
    return max(0, base - abs(charge))


def implicit_hydrogens(element: str, aromatic: bool, bond_sum: int) -> int:
    """Implicit H count for an organic-subset atom with the given bond-unit sum."""
    if aromatic and element in _PI_DONORS:
        bond_sum += 1
    for v in _NORMAL_VALENCES[element]:
        if v >= bond_sum:
            return v - bond_sum
    return 0


def _reserve(atom: Atom) -> int:
    return 1 if atom.aromatic else 0


def _required_reserve(aromatic: bool, element: str) -> int:
    return 1 if aromatic and element in _RESERVE_REQUIRED else 0


def consumed_valence(graph: MolGraph, atom: int, position: int | None = None) -> int:
    """Bond units (plus stated hydrogens) used by ``atom``.

    With ``position`` only bonds formed at token index <= position count.
    """
    a = graph.atoms[atom]
    total = a.hcount if a.bracket else 0
    for bd in graph.bonds:
        if bd.a != atom and bd.b != atom:
            continue
        if position is not None and bd.formed_at > position:
            continue
        total += bond_units(bd.order)
    return total


def remaining_valence(graph: MolGraph, atom: int, position: int | None = None) -> int:
    """Remaining bond-order capacity of ``atom``, clamped to 0..4.

    ``position`` selects the token-prefix variant: only bonds formed at or
    before that token index are counted.
    """
    if not 0 <= atom < graph.n_atoms:
        raise IndexError(f"atom {atom} out of range")
    a = graph.atoms[atom]
    left = allowed_max(a.element, a.charge) - consumed_valence(graph, atom, position) - _reserve(a)
    return min(4, max(0, left))


def atom_token_valences(graph: MolGraph) -> list[tuple[int, int, int]]:
    """``(token index, atom index, remaining valence)`` for each atom at its own token.

    These are the probe labels: the capacity an atom has at the moment it is written.
    """
    out = []
    for i, a in enumerate(graph.atoms):
        out.append((a.token, i, remaining_valence(graph, i, a.token)))
    return out


# ---------------------------------------------------------------------------
# parsing


def _parse_bracket(tok: Token, index: int, pattern: bool) -> tuple[str, bool, int, int | None]:
    m = _BRACKET_RE.match(tok.text)
    if m is None:
        raise E.UnknownCharacter(f"malformed bracket atom {tok.text!r}", tok.start)
    if m.group("iso"):
        raise E.UnsupportedFeature("isotopes are not supported", tok.start)
    sym = m.group("sym")
    if sym == "*":
        if not pattern:
            raise E.UnsupportedElement("wildcard outside a pattern", tok.start)
        element, aromatic = "*", False
    elif sym[0].islower():
        element, aromatic = sym.capitalize(), True
        if element not in AROMATIC_ELEMENTS:
            raise E.UnsupportedElement(f"unsupported aromatic element {sym!r}", tok.start)
    else:
        element, aromatic = sym, False
        if element not in ORGANIC_SUBSET:
            raise E.UnsupportedElement(f"unsupported element {sym!r}", tok.start)
    h = m.group("h")
    hcount: int | None
    if h is None:
        hcount = 0 if not pattern else None
    else:
        hcount = int(h[1:]) if len(h) > 1 else 1
    chg = m.group("chg")
    charge = 0
    if chg:
        sign = 1 if chg[0] == "+" else -1
        if len(chg) == 1:
            charge = sign
        elif chg[1] in "+-":
            charge = 2 * sign
        else:
            charge = sign * int(chg[1:])
    if abs(charge) > 2:
        raise E.UnsupportedFeature(f"charge {charge} outside +-2", tok.start)
    return element, aromatic, charge, hcount


class _Builder:
    """Mutable accumulation state shared by the SMILES and pattern parsers."""

    def __init__(self, tokens: Sequence[Token], pattern: bool):
        self.tokens = tokens
        self.pattern = pattern
        self.elements: list[str] = []
        self.aromatic: list[bool] = []
        self.charges: list[int] = []
        self.explicit_h: list[int | None] = []
        self.bracket: list[bool] = []
        self.atom_tok: list[int] = []
        self.consumed: list[int] = []
        self.bonds: list[Bond] = []
        self.pairs: set[tuple[int, int]] = set()
        self.events: list[GrammarEvent] = []

    def add_atom(self, tok: Token, index: int) -> int:
        if tok.kind == ATOM:
            text = tok.text
            if text == "*":
                element, aromatic = "*", False
            elif text[0].islower():
                element, aromatic = text.upper(), True
            else:
                element, aromatic = text, False
            charge, hcount, bracket = 0, None, False
        else:
            element, aromatic, charge, hcount = _parse_bracket(tok, index, self.pattern)
            bracket = True
        self.elements.append(element)
        self.aromatic.append(aromatic)
        self.charges.append(charge)
        self.explicit_h.append(hcount)
        self.bracket.append(bracket)
        self.atom_tok.append(index)
        self.consumed.append(hcount if (bracket and hcount) else 0)
        i = len(self.elements) - 1
        self._check(i, index)
        return i

    def _check(self, i: int, position: int) -> None:
        if self.pattern:
            return
        el = self.elements[i]
        need = self.consumed[i] + _required_reserve(self.aromatic[i], el)
        if need > allowed_max(el, self.charges[i]):
            raise E.ValenceExceeded(i, self.tokens[position].start)

    def add_bond(self, a: int, b: int, order: int, toks: tuple[int, ...], formed_at: int) -> None:
        if a == b:
            raise E.InvalidBond("self-bond", self.tokens[formed_at].start)
        key = (a, b) if a < b else (b, a)
        if key in self.pairs:
            raise E.InvalidBond(f"duplicate bond between atoms {a} and {b}", self.tokens[formed_at].start)
        self.pairs.add(key)
        self.bonds.append(Bond(a, b, order, toks, formed_at))
        u = bond_units(order) if order > 0 else 1
        self.consumed[a] += u
        self.consumed[b] += u
        self._check(a, formed_at)
        self._check(b, formed_at)

    def default_order(self, a: int, b: int) -> int:
        if self.pattern:
            return 0  # "single or aromatic"
        return AROMATIC if (self.aromatic[a] and self.aromatic[b]) else 1


def _bond_order(text: str) -> int:
    if text == "~":
        return -1  # pattern any-bond
    return BOND_SYMBOL_ORDER[text]


def _scan(tokens: Sequence[Token], pattern: bool) -> _Builder:
    st = _Builder(tokens, pattern)
    prev: int | None = None
    last_kind: str | None = None  # kind of last non-bond token
    pending: tuple[int, int] | None = None  # (order, token index)
    branch_stack: list[tuple[int, int, int]] = []  # (anchor atom, '(' index, atom count at open)
    # label -> (atom, order or None, digit index, bond token index or -1)
    ring_open: dict[int, tuple[int, int | None, int, int]] = {}

    for idx, tok in enumerate(tokens):
        kind = tok.kind
        if kind == ATOM or kind == BRACKET_ATOM:
            i = st.add_atom(tok, idx)
            if prev is not None:
                if pending is not None:
                    st.add_bond(prev, i, pending[0], (pending[1],), idx)
                else:
                    st.add_bond(prev, i, st.default_order(prev, i), (), idx)
            elif pending is not None:
                raise E.DanglingBond("bond with no preceding atom", tokens[pending[1]].start)
            pending = None
            prev = i
            last_kind = kind
        elif kind == BOND:
            if prev is None or pending is not None:
                raise E.DanglingBond("bond without a left atom", tok.start)
            pending = (_bond_order(tok.text), idx)
        elif kind == RING_DIGIT:
            if prev is None or last_kind not in (ATOM, BRACKET_ATOM, RING_DIGIT):
                raise E.MisplacedToken("ring label must follow an atom", tok.start)
            label = tok.label
            order = pending[0] if pending is not None else None
            bond_tok = pending[1] if pending is not None else -1
            if label in ring_open:
                partner, open_order, open_idx, open_bond_tok = ring_open.pop(label)
                if order is not None and open_order is not None and order != open_order:
                    raise E.InvalidBond(f"conflicting bond orders on ring {label}", tok.start)
                final = order if order is not None else open_order
                if final is None:
                    final = st.default_order(partner, prev)
                toks = tuple(sorted(t for t in (open_idx, idx, bond_tok, open_bond_tok) if t >= 0))
                st.add_bond(partner, prev, final, toks, idx)
                st.events.append(GrammarEvent("ring", open_idx, idx))
            else:
                ring_open[label] = (prev, order, idx, bond_tok)
            pending = None
            last_kind = kind
        elif kind == OPEN_PAREN:
            if prev is None:
                raise E.UnbalancedParen("branch with no preceding atom", tok.start)
            if pending is not None:
                raise E.DanglingBond("bond before branch", tokens[pending[1]].start)
            if last_kind == OPEN_PAREN:
                raise E.MisplacedToken("branch opened without an atom", tok.start)
            branch_stack.append((prev, idx, len(st.elements)))
            last_kind = kind
        else:  # CLOSE_PAREN
            if not branch_stack:
                raise E.UnbalancedParen("unmatched ')'", tok.start)
            if pending is not None:
                raise E.DanglingBond("bond at end of branch", tokens[pending[1]].start)
            anchor, open_idx, n_at_open = branch_stack.pop()
            if len(st.elements) == n_at_open:
                raise E.EmptyBranch("empty branch", tok.start)
            st.events.append(GrammarEvent("branch", open_idx, idx))
            prev = anchor
            last_kind = kind
    if pending is not None:
        raise E.DanglingBond("bond at end of input", tokens[pending[1]].start)
    if branch_stack:
        raise E.UnbalancedParen("unmatched '('", tokens[branch_stack[-1][1]].start)
    if ring_open:
        label = min(ring_open)
        raise E.UnclosedRing(label, tokens[ring_open[label][2]].start)
    return st


def _finalize_atoms(
    elements: Sequence[str],
    aromatic: Sequence[bool],
    charges: Sequence[int],
    explicit_h: Sequence[int | None],
    atom_tok: Sequence[int],
    bonds: Sequence[Bond],
) -> tuple[Atom, ...]:
    bond_sum = [0] * len(elements)
    for bd in bonds:
        u = bond_units(bd.order)
        bond_sum[bd.a] += u
        bond_sum[bd.b] += u
    atoms = []
    for i, el in enumerate(elements):
        h = explicit_h[i]
        if h is None:
            atoms.append(Atom(el, aromatic[i], charges[i], implicit_hydrogens(el, aromatic[i], bond_sum[i]),
                              False, atom_tok[i]))
        else:
            atoms.append(Atom(el, aromatic[i], charges[i], h, True, atom_tok[i]))
    return tuple(atoms)


def parse(smiles: str | Sequence[Token]) -> MolGraph:
    """Parse a SMILES string (or its tokens) into a validated :class:`MolGraph`.

    Raises one :class:`~molmech.smiles.errors.SmilesError` subclass on failure.
    """
    tokens = tokenize(smiles) if isinstance(smiles, str) else list(smiles)
    if not tokens:
        raise E.EmptyInput("no tokens")
    st = _scan(tokens, pattern=False)
    atoms = _finalize_atoms(st.elements, st.aromatic, st.charges, st.explicit_h, st.atom_tok, st.bonds)
    events = tuple(sorted(st.events, key=lambda e: e.close_pos))
    return MolGraph(atoms, tuple(st.bonds), tuple(tokens), events)


def try_parse(smiles: str) -> MolGraph | None:
    try:
        return parse(smiles)
    except E.SmilesError:
        return None


def is_valid(smiles: str) -> bool:
    return try_parse(smiles) is not None


def grammar_events(tokens: str | Sequence[Token], batch_id: int = 0) -> list[GrammarEvent]:
    """Matched (opener, closer) pairs for ring labels and branches, ordered by closer."""
    g = parse(tokens)
    if batch_id == 0:
        return list(g.events)
    return [GrammarEvent(e.kind, e.open_pos, e.close_pos, batch_id) for e in g.events]


def build_graph(
    atoms: Iterable[tuple[str, bool, int, int | None]],
    bonds: Iterable[tuple[int, int, int]],
) -> MolGraph:
    """Construct a validated graph from ``(element, aromatic, charge, explicit_h)`` atoms.

    ``explicit_h`` of ``None`` means hydrogens are implicit.  Bonds are
    ``(a, b, order)`` with ``order`` in 1, 2, 3 or :data:`AROMATIC`.
    """
    atoms = list(atoms)
    elements = [a[0] for a in atoms]
    aromatic = [bool(a[1]) for a in atoms]
    charges = [int(a[2]) for a in atoms]
    explicit_h = [a[3] for a in atoms]
    consumed = [h or 0 for h in explicit_h]
    seen: set[tuple[int, int]] = set()
    bond_list = []
    for a, b, order in bonds:
        if a == b:
            raise E.InvalidBond("self-bond")
        key = (a, b) if a < b else (b, a)
        if key in seen:
            raise E.InvalidBond(f"duplicate bond {key}")
        seen.add(key)
        bond_list.append(Bond(a, b, order))
        consumed[a] += bond_units(order)
        consumed[b] += bond_units(order)
    for i, el in enumerate(elements):
        if consumed[i] + _required_reserve(aromatic[i], el) > allowed_max(el, charges[i]):
            raise E.ValenceExceeded(i)
    finished = _finalize_atoms(elements, aromatic, charges, explicit_h, [-1] * len(elements), bond_list)
    return MolGraph(finished, tuple(bond_list))


def empty_graph() -> MolGraph:
    return MolGraph((), ())
