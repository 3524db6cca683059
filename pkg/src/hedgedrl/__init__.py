"""Contextual deep-RL hedging overlay planner with baselines and walk-forward evaluation."""

__version__ = "0.1.0"
