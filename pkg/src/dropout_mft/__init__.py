"""Dropout-deformed mean-field theory of deep signal propagation."""

__version__ = "0.1.0"
