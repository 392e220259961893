"""Gaussian-process latent models: dense, multi-fidelity, and sparse."""
