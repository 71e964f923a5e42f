"""Differentiable PDE solvers used as physical models."""
