"""Hybrid actor-critic / MPC toolkit for mixed-integer optimal control."""

__version__ = "0.1.0"
