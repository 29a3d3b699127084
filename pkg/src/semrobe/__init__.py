"""Continuous, discrete and semantic robustness assessment for small NLP classifiers."""

__version__ = "0.1.0"
