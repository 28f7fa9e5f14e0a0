"""Continual-learning laboratory for studying dropout as a task gate."""

__version__ = "0.1.0"
