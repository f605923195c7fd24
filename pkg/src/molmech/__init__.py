"""Desk-scale mechanistic interpretability workbench for SMILES language models."""

__version__ = "0.1.0"
