"""Finite cell analysis on oriented point clouds."""

__version__ = "0.1.0"
