"""Synthetic document layout datasets: layout generation, page rendering and style-based selection."""

__version__ = "0.1.0"
