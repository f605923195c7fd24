"""Chemistry-aware SMILES tokenizer.

Token classes, tried in this order at every offset:

* bracket atoms ``[...]`` (one token each),
* organic-subset atoms, two-letter ``Cl``/``Br`` before single letters,
* bonds ``- = # / \\ :``,
* ring labels ``%NN`` and single digits,
* parentheses.

Pattern mode additionally accepts the ``*`` wildcard atom and the ``~`` any-bond.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from molmech.smiles.errors import EmptyInput, UnknownCharacter, UnterminatedBracket

ATOM = "atom"
BRACKET_ATOM = "bracket-atom"
BOND = "bond"
RING_DIGIT = "ring-digit"
OPEN_PAREN = "open-paren"
CLOSE_PAREN = "close-paren"

_TOKEN_RE = re.compile(
    r"(\[[^\[\]]*\])|(Cl|Br|[BCNOPSFI]|[bcnops])|([-=#/\\:])|(%[0-9]{2}|[0-9])|(\()|(\))"
)
_PATTERN_RE = re.compile(
    r"(\[[^\[\]]*\])|(Cl|Br|[BCNOPSFI]|[bcnops]|\*)|([-=#/\\:~])|(%[0-9]{2}|[0-9])|(\()|(\))"
)
_KINDS = (BRACKET_ATOM, ATOM, BOND, RING_DIGIT, OPEN_PAREN, CLOSE_PAREN)


@dataclass(frozen=True, slots=True)
class Token:
    kind: str
    text: str
    start: int
    end: int

    @property
    def label(self) -> int | None:
        """Numeric ring label for ring-digit tokens, else None."""
        if self.kind != RING_DIGIT:
            return None
        return int(self.text[1:]) if self.text[0] == "%" else int(self.text)

    @property
    def is_atom(self) -> bool:
        return self.kind == ATOM or self.kind == BRACKET_ATOM


def tokenize(smiles: str, *, pattern: bool = False) -> list[Token]:
    """Split ``smiles`` into an exhaustive, non-overlapping list of tokens.

    Raises:
        EmptyInput: for the empty string.
        UnknownCharacter: at the first offset no token class matches.
        UnterminatedBracket: for a ``[`` without a matching ``]``.
    """
    if not smiles:
        raise EmptyInput("empty SMILES")
    regex = _PATTERN_RE if pattern else _TOKEN_RE
    match = regex.match
    out: list[Token] = []
    pos = 0
    n = len(smiles)
    while pos < n:
        m = match(smiles, pos)
        if m is None:
            if smiles[pos] == "[":
                raise UnterminatedBracket("unterminated bracket atom", pos)
            raise UnknownCharacter(f"unknown character {smiles[pos]!r}", pos)
        end = m.end()
        out.append(Token(_KINDS[m.lastindex - 1], m.group(), pos, end))
        pos = end
    return out


def detokenize(tokens: list[Token]) -> str:
    return "".join(t.text for t in tokens)
