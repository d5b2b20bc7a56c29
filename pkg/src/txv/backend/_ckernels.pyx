# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled matrix kernels.

Naive loop nests on purpose: the inner summation runs strictly left to
right, so results are bitwise reproducible across runs and thread counts.
"""

import numpy as np


def matmul(double[:, :] a, double[:, :] b):
    """a (m x k) times b (k x n), fixed-order inner summation."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double acc
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, :] c = out
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc = acc + a[i, p] * b[p, j]
            c[i, j] = acc
    return out


def linear_relu(double[:, :] x, double[:, :] w, double[:] bias):
    """ReLU(x @ w.T + bias) for a batch of row vectors x (n x d_in)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d_in = x.shape[1]
    cdef Py_ssize_t d_out = w.shape[0]
    cdef Py_ssize_t i, j, p
    cdef double acc
    out = np.empty((n, d_out), dtype=np.float64)
    cdef double[:, :] y = out
    for i in range(n):
        for j in range(d_out):
            acc = bias[j]
            for p in range(d_in):
                acc = acc + x[i, p] * w[j, p]
            y[i, j] = acc if acc > 0.0 else 0.0
    return out
