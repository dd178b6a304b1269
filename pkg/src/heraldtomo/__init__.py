"""Simulation and inference for heralded single photons read out of an atomic memory."""

__version__ = "0.1.0"
