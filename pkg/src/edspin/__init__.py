"""Numerical laboratory for the entropic dynamics of a spin-1/2 particle."""

__version__ = "0.1.0"
