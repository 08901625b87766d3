"""Relaxed E(3)-equivariant graph convolutions."""
__version__ = "0.1.0"
