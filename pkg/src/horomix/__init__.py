"""Numerical laboratory for time-changed horocycle flows on the Bolza surface."""

__version__ = "0.1.0"
