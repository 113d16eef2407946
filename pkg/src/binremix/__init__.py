"""Binaural source-remixing filters: design, closed-form analysis, simulation."""

__version__ = '0.1.0'
