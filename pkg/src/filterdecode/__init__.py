"""Decode convolutional filters into image space and measure how well they explain a CNN."""

__version__ = "0.1.0"
