"""Joint price and power optimization for workplace EV charging stations."""

__version__ = "0.1.0"
