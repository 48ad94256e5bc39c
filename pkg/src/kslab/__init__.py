"""Numerical laboratory for chemotaxis toy models: spectral solvers, blowup cascades,
moment certificates and fitted inequality constants."""

__version__ = "0.1.0"
