"""Incremental human activity recognition from smart-home sensor streams."""

__version__ = "0.1.0"
