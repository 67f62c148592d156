"""Simulation and certification lab for score-based generative models on
Gaussian data: forward OU noising, SGLD score matching, Euler-Maruyama
backward sampling, explicit Wasserstein-2 bounds and Monte Carlo checks."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
