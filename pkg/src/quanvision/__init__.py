"""Quanvolutional neural networks for surface crack detection."""

__version__ = "0.1.0"
