"""Two-stage reinforcement learning for a UAV/UGV search team in a forked mine tunnel."""

__version__ = "0.1.0"
