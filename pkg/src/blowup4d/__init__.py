"""Numerics for concentrating solutions of Lap^2 u = rho^4 k e^u in four-dimensional boxes."""

__version__ = "0.1.0"
