"""Constraint analysis and integration of linearly singular differential equations."""

__version__ = "0.1.0"
