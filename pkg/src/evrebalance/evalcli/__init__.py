"""Metrics, paired experiments, sweeps, training runs and the command line."""
