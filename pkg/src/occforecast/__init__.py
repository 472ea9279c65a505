"""Occupancy forecasting on synthetic 4D voxel worlds, built on a small numpy autograd."""

__version__ = "0.1.0"
