"""Reward-based image classification with adversarial training."""

__version__ = "0.1.0"
