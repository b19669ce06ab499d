"""Sentinel network mining with group sparse Bayesian learning."""
__version__ = "0.1.0"
