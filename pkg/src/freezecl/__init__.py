"""Selective-freezing continual learning for binary detectors."""

__version__ = "0.1.0"
