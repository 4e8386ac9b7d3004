"""Inter-class diffusion augmentation for domain-specific image classification."""

__version__ = "0.1.0"
