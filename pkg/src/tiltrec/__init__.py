"""Tomographic reconstruction from tilt series with unknown view angles.

The package simulates noisy projection tilt series of a band-limited 2-D
object viewed at unknown angles drawn from an unknown discrete distribution,
and recovers both the object (as Fourier-Bessel coefficients) and the angle
distribution.  Two estimators are provided: a method-of-moments solver that
matches first and second empirical moments by ADMM, and an expectation-
maximization refiner that climbs the marginalized likelihood.
"""

from .errors import ConfigError, SolverError

__all__ = ["ConfigError", "SolverError"]

__version__ = "0.1.0"
