"""Temporal-difference-displacement masking for recurrent Q-learning."""

__version__ = "0.1.0"
