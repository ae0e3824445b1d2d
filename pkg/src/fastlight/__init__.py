"""Simulation and analysis toolkit for entanglement passing through fast- and
slow-light media, from Gaussian covariance theory down to synthetic homodyne
records."""

__version__ = "0.1.0"
