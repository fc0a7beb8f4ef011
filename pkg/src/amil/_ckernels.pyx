# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the per-layer elementwise kernels.

Same signatures and semantics as ``amil._kernels_py``.  Each function makes
a fixed number of passes over row-major ``[rows, width]`` data; column
reductions accumulate row by row, so results do not depend on threading.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def _elu_inplace(y):
    # max(y, 0) + expm1(min(y, 0)); numpy's expm1 is vectorized, libm's is not
    t = np.minimum(y, 0.0)
    np.expm1(t, out=t)
    np.maximum(y, 0.0, out=y)
    y += t


def bn_elu_forward_train(const double[:, ::1] z, const double[::1] gamma,
                         const double[::1] beta, double eps):
    cdef Py_ssize_t n = z.shape[0], w = z.shape[1], i, j
    a_arr = np.empty((n, w), dtype=np.float64)
    xhat_arr = np.empty((n, w), dtype=np.float64)
    mean_arr = np.zeros(w, dtype=np.float64)
    var_arr = np.zeros(w, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double[::1] inv_std = np.empty(w, dtype=np.float64)
    cdef double d, inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            for j in range(w):
                mean[j] += z[i, j]
        for j in range(w):
            mean[j] *= inv_n
        for i in range(n):
            for j in range(w):
                d = z[i, j] - mean[j]
                var[j] += d * d
        for j in range(w):
            var[j] *= inv_n
            inv_std[j] = 1.0 / sqrt(var[j] + eps)
        for i in range(n):
            for j in range(w):
                d = (z[i, j] - mean[j]) * inv_std[j]
                xhat[i, j] = d
                a[i, j] = d * gamma[j] + beta[j]
    _elu_inplace(a_arr)
    return a_arr, xhat_arr, mean_arr, var_arr


def bn_elu_forward_eval(const double[:, ::1] z, const double[::1] gamma,
                        const double[::1] beta, const double[::1] running_mean,
                        const double[::1] running_var, double eps):
    cdef Py_ssize_t n = z.shape[0], w = z.shape[1], i, j
    a_arr = np.empty((n, w), dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[::1] scale = np.empty(w, dtype=np.float64)
    with nogil:
        for j in range(w):
            scale[j] = gamma[j] / sqrt(running_var[j] + eps)
        for i in range(n):
            for j in range(w):
                a[i, j] = (z[i, j] - running_mean[j]) * scale[j] + beta[j]
    _elu_inplace(a_arr)
    return a_arr


def bn_elu_backward(const double[:, ::1] da, const double[:, ::1] a,
                    const double[:, ::1] xhat, const double[::1] gamma,
                    const double[::1] var, double eps):
    cdef Py_ssize_t n = da.shape[0], w = da.shape[1], i, j
    dz_arr = np.empty((n, w), dtype=np.float64)
    dgamma_arr = np.zeros(w, dtype=np.float64)
    dbeta_arr = np.zeros(w, dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double[::1] scale = np.empty(w, dtype=np.float64)
    cdef double dy, fn = <double>n
    with nogil:
        for i in range(n):
            for j in range(w):
                dy = da[i, j] if a[i, j] > 0.0 else da[i, j] * (a[i, j] + 1.0)
                dz[i, j] = dy
                dbeta[j] += dy
                dgamma[j] += dy * xhat[i, j]
        for j in range(w):
            scale[j] = gamma[j] / sqrt(var[j] + eps) / fn
        for i in range(n):
            for j in range(w):
                dz[i, j] = scale[j] * (fn * dz[i, j] - dbeta[j] - xhat[i, j] * dgamma[j])
    return dz_arr, dgamma_arr, dbeta_arr


def bag_mean_pool(const double[:, ::1] h, Py_ssize_t n_b):
    cdef Py_ssize_t m = h.shape[0] // n_b, w = h.shape[1], b, k, j, row
    out_arr = np.zeros((m, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double inv = 1.0 / n_b
    with nogil:
        for b in range(m):
            for k in range(n_b):
                row = b * n_b + k
                for j in range(w):
                    out[b, j] += h[row, j]
            for j in range(w):
                out[b, j] *= inv
    return out_arr


def bag_mean_pool_backward(const double[:, ::1] g, Py_ssize_t n_b):
    cdef Py_ssize_t m = g.shape[0], w = g.shape[1], b, k, j, row
    out_arr = np.empty((m * n_b, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double v
    with nogil:
        for b in range(m):
            for j in range(w):
                v = g[b, j] / n_b
                for k in range(n_b):
                    out[b * n_b + k, j] = v
    return out_arr
