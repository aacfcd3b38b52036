"""Finite-mode quantum Bose gas versus its renormalized classical field limit."""

__version__ = "0.1.0"
