"""Blind hyperspectral/multispectral fusion by unknown-to-known degradation transfer."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
