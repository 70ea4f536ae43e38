"""Numerical laboratory for higher-order linearization of semilinear DN maps."""

__version__ = "0.1.0"
