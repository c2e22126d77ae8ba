"""Diffusion-based augmentation and adversarial fine-tuning for respiratory sound classification."""

__version__ = "0.1.0"
