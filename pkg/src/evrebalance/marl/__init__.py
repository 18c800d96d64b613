"""Multi-agent rebalancing: observations, rewards, cascaded policies and trainers."""
