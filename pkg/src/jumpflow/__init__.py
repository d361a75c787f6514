"""Numerical laboratory for jump-driven SDEs with singular drift."""
__version__ = "0.1.0"
