# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the depthwise blur and the im2col scatter.

Reductions run in a fixed sequential order so repeated calls are bit-identical.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def depthwise_conv2d(real[:, :, :, ::1] x, real[:, ::1] k):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t Ho = H - kh + 1, Wo = W - kw + 1
    cdef Py_ssize_t n, c, u, v, i, j
    cdef real kv
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((N, C, Ho, Wo), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                for u in range(kh):
                    for v in range(kw):
                        kv = k[u, v]
                        for i in range(Ho):
                            for j in range(Wo):
                                out[n, c, i, j] += kv * x[n, c, i + u, j + v]
    return out_arr


def depthwise_conv2d_grad_input(real[:, :, :, ::1] g, real[:, ::1] k):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t n, c, u, v, i, j
    cdef real kv
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((N, C, Ho + kh - 1, Wo + kw - 1), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                for u in range(kh):
                    for v in range(kw):
                        kv = k[u, v]
                        for i in range(Ho):
                            for j in range(Wo):
                                gx[n, c, i + u, j + v] += kv * g[n, c, i, j]
    return gx_arr


def depthwise_conv2d_grad_kernel(real[:, :, :, ::1] x, real[:, :, :, ::1] g, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t n, c, u, v, i, j
    cdef real acc
    dtype = np.float32 if real is float else np.float64
    gk_arr = np.zeros((kh, kw), dtype=dtype)
    cdef real[:, ::1] gk = gk_arr
    # axpy over the kernel row keeps the inner loop free of a reduction chain
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for u in range(kh):
                        for j in range(Wo):
                            acc = g[n, c, i, j]
                            for v in range(kw):
                                gk[u, v] += acc * x[n, c, i + u, j + v]
    return gk_arr


def im2col(real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw):
    """Gather (N, C, H, W) into (C, kh, kw, N, Ho, Wo) valid-window columns."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H - kh + 1, Wo = W - kw + 1
    cdef Py_ssize_t n, c, u, v, i, j
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((C, kh, kw, N, Ho, Wo), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] cols = cols_arr
    with nogil:
        for c in range(C):
            for u in range(kh):
                for v in range(kw):
                    for n in range(N):
                        for i in range(Ho):
                            for j in range(Wo):
                                cols[c, u, v, n, i, j] = x[n, c, i + u, j + v]
    return cols_arr


def col2im(real[:, :, :, :, :, ::1] cols, Py_ssize_t H, Py_ssize_t W):
    """Scatter-add (C, kh, kw, N, Ho, Wo) column gradients back to (N, C, H, W)."""
    cdef Py_ssize_t C = cols.shape[0], kh = cols.shape[1], kw = cols.shape[2]
    cdef Py_ssize_t N = cols.shape[3], Ho = cols.shape[4], Wo = cols.shape[5]
    cdef Py_ssize_t n, c, u, v, i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((N, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    with nogil:
        for c in range(C):
            for u in range(kh):
                for v in range(kw):
                    for n in range(N):
                        for i in range(Ho):
                            for j in range(Wo):
                                out[n, c, i + u, j + v] += cols[c, u, v, n, i, j]
    return out_arr
