"""Desk-scale autoregressive motion-primitive latent diffusion with latent control."""

__version__ = "0.1.0"
