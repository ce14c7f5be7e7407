"""Repository tools shared by the engine."""
