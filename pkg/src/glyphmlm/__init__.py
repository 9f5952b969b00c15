"""Allograph-aware masked language modeling for fragmentary inscriptions."""

__version__ = "0.1.0"
