"""Ensemble Gaussian sum filter with EnKF, EnSRF and SIR baselines."""

__version__ = "0.1.0"
