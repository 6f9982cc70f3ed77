"""Attribute offline-RL decisions to clusters of training trajectories."""

__version__ = "0.1.0"
