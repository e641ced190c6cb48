"""Exactly solvable m,n,k-game laboratory."""

__version__ = "0.1.0"
