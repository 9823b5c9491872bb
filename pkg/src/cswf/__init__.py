"""Conditional sliced-Wasserstein flows as nonparametric generative models."""

__version__ = "0.1.0"
