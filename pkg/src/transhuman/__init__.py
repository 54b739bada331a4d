"""Generalizable neural human rendering at desk scale."""
__version__ = "0.1.0"
