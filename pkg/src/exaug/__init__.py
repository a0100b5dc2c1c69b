"""Robot-conditioned experience augmentation: view synthesis, trajectory
optimization and a closed-loop navigation simulator."""

__version__ = "0.1.0"
