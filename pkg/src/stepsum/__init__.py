"""Stepwise extractive content planning with structured transformer scorers."""

__version__ = "0.1.0"
