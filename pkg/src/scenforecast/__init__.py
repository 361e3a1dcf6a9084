"""Uncertainty-aware renewable scenario forecasting with an adversarially trained attention forecaster."""

__version__ = "0.1.0"
