"""Inconsistency-aware Gaussian splatting scene reconstruction toolkit."""

__version__ = "0.1.0"

from .camera import CameraView
from .field import SplatField, covariance
from .raster import BACKEND, rasterize, rasterize_backward

__all__ = [
    "CameraView",
    "SplatField",
    "covariance",
    "rasterize",
    "rasterize_backward",
    "BACKEND",
]
