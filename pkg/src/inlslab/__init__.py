"""Numerical laboratory for the inhomogeneous nonlinear Schroedinger equation."""
__version__ = "0.1.0"
