"""sae."""
