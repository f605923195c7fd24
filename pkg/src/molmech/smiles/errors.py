"""Typed errors raised by the SMILES engine.

Every rejection of an input string is exactly one of these classes, all of
which derive from :class:`SmilesError` so callers can catch the family.
"""

from __future__ import annotations


class SmilesError(ValueError):
    """Base class for all tokenize/parse failures."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


class EmptyInput(SmilesError):
    pass


class UnknownCharacter(SmilesError):
    pass


class UnterminatedBracket(SmilesError):
    pass


class UnsupportedElement(SmilesError):
    pass


class UnsupportedFeature(SmilesError):
    """Syntax the engine deliberately does not model (isotopes, exotic charges)."""


class UnclosedRing(SmilesError):
    def __init__(self, label: int, position: int | None = None):
        super().__init__(f"ring label {label} never closed", position)
        self.label = label


class UnbalancedParen(SmilesError):
    pass


class EmptyBranch(SmilesError):
    pass


class DanglingBond(SmilesError):
    pass


class MisplacedToken(SmilesError):
    """A ring digit or branch in a position where the grammar forbids it."""


class InvalidBond(SmilesError):
    """Self-bond, duplicate bond, or conflicting ring-closure bond orders."""


class ValenceExceeded(SmilesError):
    def __init__(self, atom: int, position: int | None = None):
        super().__init__(f"valence exceeded on atom {atom}", position)
        self.atom = atom


class WidthMismatch(ValueError):
    pass
