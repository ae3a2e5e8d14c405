"""Trajectory forecasting with a mixture-density goal estimator and Koopman refinement."""
__version__ = "0.1.0"
