# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: im2col/col2im convolution and the fused LIF fire/reset."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def _pad(x, int padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


cdef _im2col(double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, int stride):
    # layout (n, c*kh*kw, ho*wo): output pixels contiguous, so W @ cols lands in NCHW order
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hp = x.shape[2], wp = x.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    cols_arr = np.empty((n, c * kh * kw, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t b, ic, yi, xj, i, j, k, base
    with nogil:
        for b in range(n):
            k = 0
            for ic in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for yi in range(ho):
                            base = yi * wo
                            for xj in range(wo):
                                cols[b, k, base + xj] = x[b, ic, yi * stride + i, xj * stride + j]
                        k += 1
    return cols_arr, ho, wo


cdef _col2im(double[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
             Py_ssize_t kh, Py_ssize_t kw, int stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = out
    cdef Py_ssize_t b, ic, yi, xj, i, j, k, base
    with nogil:
        for b in range(n):
            k = 0
            for ic in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for yi in range(ho):
                            base = yi * wo
                            for xj in range(wo):
                                gx[b, ic, yi * stride + i, xj * stride + j] += cols[b, k, base + xj]
                        k += 1
    return out


def conv2d_forward(x_in, w_in, int stride, int padding):
    cdef Py_ssize_t n = x_in.shape[0], o = w_in.shape[0]
    cols, ho, wo = _im2col(_pad(x_in, padding), w_in.shape[2], w_in.shape[3], stride)
    y = np.matmul(np.ascontiguousarray(w_in).reshape(o, -1), cols)
    return y.reshape(n, o, ho, wo)


def conv2d_backward(x_in, w_in, gy_in, int stride, int padding):
    cdef Py_ssize_t n = x_in.shape[0], c = x_in.shape[1], h = x_in.shape[2], wd = x_in.shape[3]
    cdef Py_ssize_t o = w_in.shape[0], kh = w_in.shape[2], kw = w_in.shape[3]
    xp = _pad(x_in, padding)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    g3 = np.ascontiguousarray(gy_in).reshape(n, o, ho * wo)
    wmat = np.ascontiguousarray(w_in).reshape(o, -1)
    gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(o, c, kh, kw)
    gcols = np.matmul(wmat.T, g3)
    gxp = _col2im(gcols, c, xp.shape[2], xp.shape[3], kh, kw, stride, ho, wo)
    gx = gxp[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw)


def lif_fire(object u_in, double threshold, double tau, double gamma):
    """Fused Heaviside fire, multiplicative reset and triangular surrogate in one pass."""
    u_arr = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef double[::1] u = u_arr.reshape(-1)
    cdef Py_ssize_t k, m = u.shape[0]
    s_arr = np.empty(m, dtype=np.float64)
    h_arr = np.empty(m, dtype=np.float64)
    sg_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] s = s_arr
    cdef double[::1] hh = h_arr
    cdef double[::1] sg = sg_arr
    cdef double z, a, uk, sk, g2 = gamma * gamma
    # branchless, same operation order as the numpy fallback so results match bit for bit
    with nogil:
        for k in range(m):
            uk = u[k]
            z = uk - threshold
            sk = <double>(z >= 0.0)
            s[k] = sk
            hh[k] = tau * uk * (1.0 - sk)
            a = gamma - fabs(z)
            sg[k] = (a if a > 0.0 else 0.0) / g2
    shape = u_arr.shape
    return s_arr.reshape(shape), h_arr.reshape(shape), sg_arr.reshape(shape)
