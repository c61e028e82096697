"""Sparse regression with a square-root loss and a graph-structured penalty."""

__version__ = "0.1.0"
