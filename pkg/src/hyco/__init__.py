"""Hybrid co-training of a parametric PDE model and a neural network."""

__version__ = "0.1.0"
