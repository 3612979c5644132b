"""Certified mirror descent for Sinkhorn, latent EM and MMD problems."""

__version__ = "0.1.0"
