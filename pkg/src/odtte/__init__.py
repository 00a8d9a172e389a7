"""ODTTE - origin-destination travel-time estimation lab."""

__version__ = "0.1.0"
