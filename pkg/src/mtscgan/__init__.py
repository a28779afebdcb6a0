"""Transformer conditional GAN for multivariate time series, with its own
reverse-mode autodiff engine, evaluation metrics and command-line pipeline."""

__version__ = "0.1.0"
