"""Generalized fiducial inference: samplers, Dempster-Shafer masses, regions and coverage studies."""

__version__ = "0.1.0"
