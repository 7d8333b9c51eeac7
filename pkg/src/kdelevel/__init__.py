"""Kernel plug-in estimation of density level sets."""

__version__ = "0.1.0"
