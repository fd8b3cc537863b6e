"""Pseudo-spectral drift-flux two-phase solver with Besov-norm diagnostics."""

__version__ = "0.1.0"
