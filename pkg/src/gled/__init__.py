"""Latent-space forecasting of chaotic and turbulent dynamics with a diffusion decoder."""

__version__ = "0.1.0"
