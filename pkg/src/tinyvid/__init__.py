"""Desk-scale factorized text/image-to-video diffusion on synthetic moving shapes."""

__version__ = "0.1.0"
