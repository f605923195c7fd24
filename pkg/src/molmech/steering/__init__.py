"""Steering generation by shifting SAE latents, with similarity reporting."""
