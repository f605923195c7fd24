"""cli."""
