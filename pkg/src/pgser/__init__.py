"""Prioritized goal-swapping experience replay for tabular offline goal-conditioned RL."""

__version__ = "0.1.0"
