"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``RSCSNN_PURE_PYTHON=1`` is set. Signatures mirror ``_ckernels.pyx``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) view over the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, padding):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(_pad(x, padding), kh, kw, stride)
    return np.ascontiguousarray(np.einsum("nchwij,ocij->nohw", win, w, optimize=True))


def conv2d_backward(x, w, gy, stride, padding):
    n, c, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, stride)
    gw = np.einsum("nchwij,nohw->ocij", win, gy, optimize=True)
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros_like(xp)
    # scatter each kernel tap back onto the strided input grid
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("nohw,oc->nchw", gy, w[:, :, i, j], optimize=True)
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib
    if padding:
        gxp = gxp[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(gxp), np.ascontiguousarray(gw)


def lif_fire(u, threshold, tau, gamma):
    z = u - threshold
    s = (z >= 0.0).astype(np.float64)
    h = tau * u * (1.0 - s)
    sg = np.maximum(gamma - np.abs(z), 0.0) / (gamma * gamma)
    return s, h, sg
