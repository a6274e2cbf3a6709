"""Multiscale autoregressive image density models."""
__version__ = "0.1.0"
