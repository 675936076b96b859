"""Quasi-maximum-likelihood estimation for GARCH, AGARCH and EGARCH models."""

__version__ = "0.1.0"
