"""Certainty-driven consistency learning for semi-supervised classification."""

__version__ = "0.1.0"
