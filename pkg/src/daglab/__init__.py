"""Augmentation-aware GAN training on toy data, with the supporting divergence checks."""

__version__ = "0.1.0"
