"""Nonparametric estimation of fractional derivatives of reliability and spectral functions."""
__version__ = "0.1.0"
