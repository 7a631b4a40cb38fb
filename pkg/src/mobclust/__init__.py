"""Permutation-equivalent clustering of mobility context sequences."""

__version__ = "0.1.0"
