"""Compute-in-memory on-chip training benchmark simulator."""

__version__ = "0.1.0"
