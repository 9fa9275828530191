"""Bayesian covariance and precision matrix posteriors and their matrix-normal limits."""

__version__ = "0.1.0"
