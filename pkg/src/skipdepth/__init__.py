"""Monocular depth network with windowed cross-attention skip fusion and adaptive bins."""

__version__ = "0.1.0"
