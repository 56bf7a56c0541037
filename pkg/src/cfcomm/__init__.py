"""Simulation and analysis of counterfactual communication protocols."""

__version__ = "0.1.0"
