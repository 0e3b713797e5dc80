"""GP-RMAX: model-based reinforcement learning with Gaussian-process dynamics models."""

__version__ = "0.1.0"
