"""Numerical verification of uniform-in-epsilon mixing for hypoelliptic SDEs with energy-conserving nonlinearities."""

__version__ = "0.1.0"
