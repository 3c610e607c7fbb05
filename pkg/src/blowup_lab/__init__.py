"""Numerical laboratory for stable self-similar blow-up of the supercritical radial wave equation."""

__version__ = "0.1.0"
