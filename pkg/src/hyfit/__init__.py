"""Finite-time hybrid parameter estimation for linear regression models.

Core pieces: declarative signals, excitation analysis, the two-estimator
hybrid (flow + jump) scheme with reset gains, noise-robustness bound
verification, reference estimators and a scaling benchmark, all behind a
command-line front end (``hyfit``).
"""

__version__ = "0.1.0"

from . import baselines, cli, config, estimator, excitation, numerics, robustness, signals  # noqa: F401
