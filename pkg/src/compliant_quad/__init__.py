"""Simulation and control of a compliant-arm quadrotor that explores by touch."""

__version__ = "0.1.0"
