"""Landmark-conditioned RGBD face synthesis pipeline."""

__version__ = "0.1.0"
