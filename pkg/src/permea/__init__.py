"""Permeability analysis for self-similar sets and planar obstacle sets."""

__version__ = "0.1.0"
