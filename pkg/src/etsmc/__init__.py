"""Event-triggered sliding-mode formation control of stochastic multi-agent systems."""
__version__ = "0.1.0"
