"""Simulation and bounds for unsourced random access over quasi-static Rayleigh fading."""

__version__ = "0.1.0"
