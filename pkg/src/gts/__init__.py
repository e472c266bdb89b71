"""Grouped time-series forecast reconciliation for demographic rates."""

__version__ = "0.1.0"
