"""Desk-scale causal-effect-regularized classification toolkit."""

__version__ = "0.1.0"
