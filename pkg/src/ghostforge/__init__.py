"""Computational ghost imaging simulation, reconstruction and learned denoising."""

__version__ = "0.1.0"
