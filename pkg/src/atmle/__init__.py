"""Adaptive TMLE for augmenting randomized trials with external real-world data."""

__version__ = "0.1.0"
