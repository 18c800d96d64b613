"""Incentive-based fleet rebalancing for expanding EV sharing systems."""

__version__ = "0.1.0"
