"""Adaptive linearization and splitting schemes for porous-media problems."""

__version__ = "0.1.0"
