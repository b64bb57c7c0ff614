"""Pose estimation from sparse, loosely worn IMUs with conditional diffusion models."""

__version__ = "0.1.0"
