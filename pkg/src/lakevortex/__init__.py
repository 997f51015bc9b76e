"""Desingularized steady vortices of the lake equations on gridded domains."""

__version__ = "0.1.0"
