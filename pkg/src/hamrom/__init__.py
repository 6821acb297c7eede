"""Reduction of parameterized Hamiltonian systems with linear and autoencoder-based models."""

__version__ = "0.1.0"
