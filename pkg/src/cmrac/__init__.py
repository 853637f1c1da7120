"""Constrained model reference adaptive control: simulation and feasibility analysis."""

__version__ = "0.1.0"
