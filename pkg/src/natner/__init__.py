"""Noise-aware named entity recognition with a linear-chain CRF."""

__version__ = "0.1.0"
