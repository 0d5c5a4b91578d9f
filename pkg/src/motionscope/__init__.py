"""Referring motion segmentation on a synthetic grid benchmark."""

__version__ = "0.1.0"
