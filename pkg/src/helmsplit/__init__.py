"""Spectral kernel-splitting BEM for sound-soft acoustic scattering."""

__version__ = "0.1.0"
