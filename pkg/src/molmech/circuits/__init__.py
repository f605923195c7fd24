"""Syntax-circuit metrics and valence probing/steering."""
