"""Reinforcement-learning macro placement on bookshelf designs."""

__version__ = "0.1.0"
