"""Stochastic occupancy-grid prediction and evaluation toolkit."""

__version__ = "0.1.0"
