"""Simulator of a polarization-encoding BB84 link built from LiNbO3 phase modulators."""

__version__ = "0.1.0"
