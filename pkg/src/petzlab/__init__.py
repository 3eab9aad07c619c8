"""Continuous-time Petz recovery for Lindblad open quantum dynamics."""
__version__ = "0.1.0"
