"""Model-based goal data augmentation for goal-conditioned weighted supervised learning."""

__version__ = "0.1.0"
