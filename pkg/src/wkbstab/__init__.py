"""Spectral toolkit for WKB geometric optics and the Klein-Gordon non-relativistic limit."""

__version__ = "0.1.0"
