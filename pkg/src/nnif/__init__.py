"""Adversarial-example detection from nearest-neighbour ranks of influential training points."""

__version__ = "0.1.0"
