"""Generalized (Tsallis) mutual-information registration toolkit."""

__version__ = "0.1.0"
