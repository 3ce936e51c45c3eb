"""Normalized solutions of m-coupled cubic Gross-Pitaevskii systems on boxes."""

__version__ = "0.1.0"
