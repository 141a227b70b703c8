"""Residual recurrent sentence autoencoder with match-drop training."""

__version__ = "0.1.0"
