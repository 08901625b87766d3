# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sparse tensor-product kernels (same contract as ``_kernels_py``)."""
import numpy as np


def forward(const int[::1] path, const int[::1] idx_in, const int[::1] idx_filter,
            const int[::1] idx_out, const double[::1] coef, int dim_out,
            const double[:, ::1] x, const double[:, ::1] y, const double[:, :] w):
    cdef Py_ssize_t n_batch = x.shape[0], nnz = coef.shape[0], e, n
    out = np.zeros((n_batch, dim_out))
    cdef double[:, ::1] o = out
    with nogil:
        for e in range(n_batch):
            for n in range(nnz):
                o[e, idx_out[n]] += w[e, path[n]] * coef[n] * x[e, idx_in[n]] * y[e, idx_filter[n]]
    return out


def backward(const int[::1] path, const int[::1] idx_in, const int[::1] idx_filter,
             const int[::1] idx_out, const double[::1] coef, int num_weights,
             const double[:, ::1] g, const double[:, ::1] x, const double[:, ::1] y,
             const double[:, :] w):
    cdef Py_ssize_t n_batch = x.shape[0], nnz = coef.shape[0], e, n
    cdef double gc, wk, xi, yf
    gx_arr = np.zeros((n_batch, x.shape[1]))
    gy_arr = np.zeros((n_batch, y.shape[1]))
    gw_arr = np.zeros((n_batch, num_weights))
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    cdef double[:, ::1] gw = gw_arr
    with nogil:
        for e in range(n_batch):
            for n in range(nnz):
                gc = g[e, idx_out[n]] * coef[n]
                if gc == 0.0:
                    continue
                wk = w[e, path[n]]
                xi = x[e, idx_in[n]]
                yf = y[e, idx_filter[n]]
                gx[e, idx_in[n]] += gc * wk * yf
                gy[e, idx_filter[n]] += gc * wk * xi
                gw[e, path[n]] += gc * xi * yf
    return gx_arr, gy_arr, gw_arr
