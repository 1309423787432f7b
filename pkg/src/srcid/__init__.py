"""Bayesian source identification for div(c grad u) = f from noisy point data."""

__version__ = "0.1.0"
