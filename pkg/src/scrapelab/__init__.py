"""Simulated robotic vial scraping: arm, impedance control, material, RL and perception."""

__version__ = "0.1.0"
