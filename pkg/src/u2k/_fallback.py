"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and array layouts; used when the extension is not built or
``U2K_PURE_PYTHON`` is set.
"""
import numpy as np


def depthwise_conv2d(x, k):
    kh, kw = k.shape
    Ho, Wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    out = np.zeros(x.shape[:2] + (Ho, Wo), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            out += k[u, v] * x[:, :, u:u + Ho, v:v + Wo]
    return out


def depthwise_conv2d_grad_input(g, k):
    kh, kw = k.shape
    Ho, Wo = g.shape[2], g.shape[3]
    gx = np.zeros(g.shape[:2] + (Ho + kh - 1, Wo + kw - 1), dtype=g.dtype)
    for u in range(kh):
        for v in range(kw):
            gx[:, :, u:u + Ho, v:v + Wo] += k[u, v] * g
    return gx


def depthwise_conv2d_grad_kernel(x, g, kh, kw):
    Ho, Wo = g.shape[2], g.shape[3]
    gk = np.empty((kh, kw), dtype=g.dtype)
    gf = g.ravel()
    for u in range(kh):
        for v in range(kw):
            gk[u, v] = np.dot(gf, x[:, :, u:u + Ho, v:v + Wo].ravel())
    return gk


def im2col(x, kh, kw):
    N, C, H, W = x.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    cols = np.empty((C, kh, kw, N, Ho, Wo), dtype=x.dtype)
    xt = x.transpose(1, 0, 2, 3)
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xt[:, :, u:u + Ho, v:v + Wo]
    return cols


def col2im(cols, H, W):
    C, kh, kw, N, Ho, Wo = cols.shape
    out = np.zeros((C, N, H, W), dtype=cols.dtype)
    for u in range(kh):
        for v in range(kw):
            out[:, :, u:u + Ho, v:v + Wo] += cols[:, u, v]
    return out.transpose(1, 0, 2, 3).copy()
