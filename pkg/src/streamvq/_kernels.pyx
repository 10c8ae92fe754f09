# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: nearest-codeword assignment.

Semantics must match streamvq._kernels_py exactly: squared Euclidean
distance, ties broken toward the lowest codeword index.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def assign_nearest(double[:, ::1] x, double[:, ::1] codewords):
    """For each row of x, the index of the nearest codeword.

    Returns (indices int64[n], squared distances float64[n]).
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t k = codewords.shape[0]
    if codewords.shape[1] != d:
        raise ValueError("dimension mismatch between inputs and codewords")

    idx_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr

    cdef Py_ssize_t i, j, c
    cdef double best, acc, diff
    cdef Py_ssize_t best_c
    for i in range(n):
        best = -1.0
        best_c = 0
        for c in range(k):
            acc = 0.0
            for j in range(d):
                diff = x[i, j] - codewords[c, j]
                acc += diff * diff
            if best < 0.0 or acc < best:
                best = acc
                best_c = c
        idx[i] = best_c
        dist[i] = best
    return idx_arr, dist_arr
