"""Online model selection for RTB bidding strategies with decay epsilon-greedy bandits."""

__version__ = "0.1.0"
