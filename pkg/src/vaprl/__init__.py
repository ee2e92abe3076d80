"""Persistent (reset-free) goal-conditioned RL with a value-thresholded curriculum."""

__version__ = "0.1.0"
