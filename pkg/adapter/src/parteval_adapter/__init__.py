"""Adapter producing protocol files for the part-level evaluation engine."""

__version__ = "0.1.0"
