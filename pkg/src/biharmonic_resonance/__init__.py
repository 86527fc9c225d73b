"""Threshold resonances and low-energy expansions of (-Delta)^2 + V in R^d, d >= 5."""

__version__ = "0.1.0"
