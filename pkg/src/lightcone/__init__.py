"""Desk-scale simulator for a non-relativistic particle coupled to a quantised field."""

__version__ = "0.1.0"
