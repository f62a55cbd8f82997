"""Finite-difference Monte Carlo laboratory for semilinear SPDEs with Burgers-type nonlinearity."""

__version__ = "0.1.0"
