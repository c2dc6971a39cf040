"""Information-geometric Bayesian inference for linear-Gaussian models."""

__version__ = "0.1.0"
