"""Unsupervised degraded-document binarization via a three-player adversarial game."""

__version__ = "0.1.0"
