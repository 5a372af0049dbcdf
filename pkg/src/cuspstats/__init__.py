"""Numerics for mesoscopic linear eigenvalue statistics near spectral cusps and edges."""

__version__ = "0.1.0"
