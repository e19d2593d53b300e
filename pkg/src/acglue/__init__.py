"""Numerical toolkit for phase-field interfaces over dilated minimal surfaces."""

__version__ = "0.1.0"
