"""Weighted Hermite-Einstein calculus on the equivariant model sphere."""

__version__ = "0.1.0"
