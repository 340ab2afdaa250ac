"""Voxel-based 3-D hand pose estimation from single depth frames."""

__version__ = "0.1.0"
