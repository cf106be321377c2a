"""Penalized semi-parallel cumulative-logit ordinal regression."""

__version__ = "0.1.0"
