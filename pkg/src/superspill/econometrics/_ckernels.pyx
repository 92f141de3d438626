# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for fixed-effect absorption and clustered score sums."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def demean_inplace(double[:, ::1] X, cnp.int64_t[:, ::1] codes, cnp.int64_t[::1] n_groups,
                   double[::1] w, double tol, Py_ssize_t max_iter):
    """Alternating projections on the rows of ``X`` (one variable per row).

    Returns (sweeps, last_change) where ``last_change`` is the largest absolute
    group mean removed during the final sweep.
    """
    cdef Py_ssize_t p = X.shape[0], n = X.shape[1], D = codes.shape[0]
    cdef Py_ssize_t d, j, i, g, G, it = 0
    cdef double change = 0.0, m
    cdef cnp.int64_t c
    cdef Py_ssize_t max_g = 0
    for d in range(D):
        if n_groups[d] > max_g:
            max_g = n_groups[d]
    wsum_arr = np.zeros((D, max_g), dtype=np.float64)
    sums_arr = np.zeros(max_g, dtype=np.float64)
    cdef double[:, ::1] wsum = wsum_arr
    cdef double[::1] sums = sums_arr
    for d in range(D):
        for i in range(n):
            wsum[d, codes[d, i]] += w[i]

    while it < max_iter:
        it += 1
        change = 0.0
        for d in range(D):
            G = n_groups[d]
            for j in range(p):
                for g in range(G):
                    sums[g] = 0.0
                for i in range(n):
                    sums[codes[d, i]] += w[i] * X[j, i]
                for g in range(G):
                    m = sums[g] / wsum[d, g]
                    sums[g] = m
                    if fabs(m) > change:
                        change = fabs(m)
                for i in range(n):
                    X[j, i] -= sums[codes[d, i]]
        if D == 1 or change < tol:
            break
    return it, change


def cluster_sums(double[:, ::1] scores, cnp.int64_t[::1] codes, Py_ssize_t n_clusters):
    """Row sums of ``scores`` within each cluster, accumulated in row order."""
    cdef Py_ssize_t n = scores.shape[0], K = scores.shape[1], i, k
    out_arr = np.zeros((n_clusters, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for k in range(K):
            out[codes[i], k] += scores[i, k]
    return out_arr
