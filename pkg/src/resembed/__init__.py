"""Residual embeddings over item interest graphs for CTR models."""

__version__ = "0.1.0"
