"""Diffuse derivative jets, Young measures and smooth approximation of sampled maps."""
__version__ = "0.1.0"
