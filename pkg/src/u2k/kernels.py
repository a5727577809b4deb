"""Backend selection for the hot convolution loops.

The Cython extension is used when it imports cleanly; otherwise (or when the
``U2K_PURE_PYTHON`` environment variable is set to a non-empty value) the
numpy fallback is used. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _fallback

if os.environ.get("U2K_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a)


def depthwise_conv2d(x, k):
    """Valid cross-correlation of every (n, c) plane of ``x`` with one 2-D kernel."""
    return _impl.depthwise_conv2d(_c(x), _c(k.astype(x.dtype, copy=False)))


def depthwise_conv2d_grad_input(g, k):
    return _impl.depthwise_conv2d_grad_input(_c(g), _c(k.astype(g.dtype, copy=False)))


def depthwise_conv2d_grad_kernel(x, g, kh, kw):
    return _impl.depthwise_conv2d_grad_kernel(_c(x.astype(g.dtype, copy=False)), _c(g), kh, kw)


def im2col(x, kh, kw):
    """(N, C, H, W) -> (C, kh, kw, N, Ho, Wo) valid-window columns."""
    return _impl.im2col(_c(x), kh, kw)


def col2im(cols, H, W):
    """Adjoint of ``im2col``: scatter-add columns back to (N, C, H, W)."""
    return _impl.col2im(_c(cols), H, W)
