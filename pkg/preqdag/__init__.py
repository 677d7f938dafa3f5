"""Bayesian-network structure learning with prequential plug-in MDL scores."""

__version__ = "1.0.0"
