"""Chance-constrained shrinking-horizon MPC with probabilistic recursive feasibility."""

__version__ = "0.1.0"
