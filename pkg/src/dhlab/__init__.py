"""Exact finite models of the local Deligne-Illusie package over truncated charts."""

__version__ = "0.1.0"
