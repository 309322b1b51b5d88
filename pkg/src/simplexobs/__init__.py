"""Numerical verification of asymptotic boundary observability for the
Dirichlet Schrodinger equation on simplices."""

__version__ = "0.1.0"
