"""Degradation modeling of longitudinal health trajectories with an LSTM,
regression baselines, embedding clustering, projection and utilization profiling."""

__version__ = "0.1.0"
