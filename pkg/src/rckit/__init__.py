"""Regression calibration for covariate measurement error."""

__version__ = "0.1.0"
