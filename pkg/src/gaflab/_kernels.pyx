# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused kernels for the hot training loop.

Only the kernels where a fused single pass beats numpy live here: the
reduction-heavy backward passes, layer norm, and the Adam update.  The
transcendental-bound forwards (softmax, tanh) stay on numpy's vectorized
math in every backend, where SIMD wins over any scalar loop.  Contracts
match ``gaflab.kernels_py``.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt


ctypedef fused floating:
    float
    double


def softmax_bwd(floating[:, ::1] out, floating[:, ::1] dout):
    cdef Py_ssize_t rows = out.shape[0], cols = out.shape[1]
    cdef Py_ssize_t i, j
    cdef double inner
    dx_arr = np.empty((rows, cols), dtype=np.asarray(out).dtype)
    cdef floating[:, ::1] dx = dx_arr
    with nogil:
        for i in range(rows):
            inner = 0.0
            for j in range(cols):
                inner += dout[i, j] * out[i, j]
            for j in range(cols):
                dx[i, j] = <floating>(out[i, j] * (dout[i, j] - inner))
    return dx_arr


def layernorm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias,
                  double eps):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mu, var, centered, r
    dtype = np.asarray(x).dtype
    out_arr = np.empty((rows, cols), dtype=dtype)
    xhat_arr = np.empty((rows, cols), dtype=dtype)
    rstd_arr = np.empty(rows, dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += x[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                centered = x[i, j] - mu
                var += centered * centered
            var /= cols
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <floating>r
            for j in range(cols):
                xhat[i, j] = <floating>((x[i, j] - mu) * r)
                out[i, j] = <floating>(xhat[i, j] * gain[j] + bias[j])
    return out_arr, xhat_arr, rstd_arr


def layernorm_bwd(floating[:, ::1] xhat, floating[::1] rstd,
                  floating[::1] gain, floating[:, ::1] dout):
    cdef Py_ssize_t rows = xhat.shape[0], cols = xhat.shape[1]
    cdef Py_ssize_t i, j
    cdef double c1, c2, dxh
    dtype = np.asarray(xhat).dtype
    dx_arr = np.empty((rows, cols), dtype=dtype)
    dgain_arr = np.zeros(cols, dtype=dtype)
    dbias_arr = np.zeros(cols, dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgain = dgain_arr
    cdef floating[::1] dbias = dbias_arr
    with nogil:
        for i in range(rows):
            c1 = 0.0
            c2 = 0.0
            for j in range(cols):
                dxh = dout[i, j] * gain[j]
                c1 += dxh
                c2 += dxh * xhat[i, j]
            c1 /= cols
            c2 /= cols
            for j in range(cols):
                dxh = dout[i, j] * gain[j]
                dx[i, j] = <floating>((dxh - c1 - xhat[i, j] * c2) * rstd[i])
                dgain[j] += <floating>(dout[i, j] * xhat[i, j])
                dbias[j] += dout[i, j]
    return dx_arr, dgain_arr, dbias_arr


def tanh_bwd(floating[::1] out, floating[::1] dout):
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t i
    dx_arr = np.empty(n, dtype=np.asarray(out).dtype)
    cdef floating[::1] dx = dx_arr
    with nogil:
        for i in range(n):
            dx[i] = <floating>(dout[i] * (1.0 - out[i] * out[i]))
    return dx_arr


def adam_step(floating[::1] param, floating[::1] grad, floating[::1] m,
              floating[::1] v, double lr, double beta1, double beta2,
              double eps, double bc1, double bc2):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
            vi = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
            m[i] = <floating>mi
            v[i] = <floating>vi
            param[i] -= <floating>(lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
