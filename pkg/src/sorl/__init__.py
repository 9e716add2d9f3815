"""Safe online RL for budget-constrained auto-bidding in a cascade auction market."""

__version__ = "0.1.0"
