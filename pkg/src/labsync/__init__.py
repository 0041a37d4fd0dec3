"""Vibration-coded test metadata and smartphone/motion-capture synchronization."""

__version__ = "0.1.0"
