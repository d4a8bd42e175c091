"""Finite-field certificates for rationality of moduli of plane curves."""

__version__ = "0.1.0"
