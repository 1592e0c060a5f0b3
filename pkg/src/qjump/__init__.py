"""Simulation and analysis of quantum-jump telegraph signals from atoms in an optical cavity."""

__version__ = "0.1.0"
