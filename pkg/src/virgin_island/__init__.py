"""Deterministic analysis and Monte Carlo simulation of the virgin island model."""
__version__ = "0.1.0"
