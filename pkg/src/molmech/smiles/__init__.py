"""smiles."""
