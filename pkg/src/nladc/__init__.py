"""Simulator and cost estimator for crossbars with nonlinear in-memory ramp ADCs."""

__version__ = "0.1.0"
