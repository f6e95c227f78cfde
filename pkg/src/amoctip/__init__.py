"""Stochastic AMOC box model, early-warning indicators and CNN tipping classifier."""

__version__ = "0.1.0"
