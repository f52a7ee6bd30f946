"""Importance-sampled stochastic optimization for black-box variational inference.

Modules
-------
approximation
    Mean-field location-scale family with constraining transforms.
models
    Target models with mini-batch-scaled log-joints and gradients.
estimators
    Fresh and importance-sampled ELBO gradient estimators.
optimizers
    SGD, I-SGD, SAG, I-SAG and SRA driven by Adam.
harness
    YAML-configured experiments and the command line back end.
"""
from . import approximation, estimators, harness, models, optimizers

__version__ = "0.1.0"

__all__ = ["approximation", "models", "estimators", "optimizers", "harness", "__version__"]
