"""Maneuvering flight envelopes of a transport aircraft under control-surface failures."""

__version__ = "0.1.0"
