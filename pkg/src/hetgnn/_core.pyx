"""Compiled kernels for the edge-scatter and brute-force kNN inner loops.

Both functions mirror ``hetgnn._fallback`` exactly; ``hetgnn.backend``
picks whichever is available.
"""
import numpy as np

from libc.stdint cimport int64_t
from libc.math cimport INFINITY


def scatter_add(const double[:, ::1] values, const int64_t[::1] index, Py_ssize_t n_targets):
    """Row-wise ``out[index[e]] += values[e]``, accumulated in edge order."""
    cdef Py_ssize_t n_edges = values.shape[0]
    cdef Py_ssize_t width = values.shape[1]
    cdef Py_ssize_t e, c
    cdef int64_t t
    if index.shape[0] != n_edges:
        raise ValueError(
            f"scatter_add: index length {index.shape[0]} != value rows {n_edges}")
    out = np.zeros((n_targets, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    for e in range(n_edges):
        t = index[e]
        if t < 0 or t >= n_targets:
            raise IndexError(f"scatter_add: target {t} out of range [0, {n_targets})")
        for c in range(width):
            o[t, c] += values[e, c]
    return out


def knn_indices(const double[:, ::1] points, Py_ssize_t k):
    """For each row i, the k nearest rows j != i by squared Euclidean distance.

    Ties go to the lower index. Returns an (n, k) int64 array ordered by
    increasing distance.
    """
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t i, j, c, pos, filled
    cdef double dist, diff
    if k < 1 or k >= n:
        raise ValueError(f"knn_indices: need 1 <= k < n, got k={k}, n={n}")
    result = np.empty((n, k), dtype=np.int64)
    cdef int64_t[:, ::1] res = result
    best_d_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] best_d = best_d_arr
    for i in range(n):
        filled = 0
        for j in range(n):
            if j == i:
                continue
            dist = 0.0
            for c in range(d):
                diff = points[i, c] - points[j, c]
                dist += diff * diff
            if filled == k and dist >= best_d[k - 1]:
                continue
            # j arrives in ascending order, so an equal distance never displaces
            pos = filled if filled < k else k - 1
            while pos > 0 and best_d[pos - 1] > dist:
                best_d[pos] = best_d[pos - 1]
                res[i, pos] = res[i, pos - 1]
                pos -= 1
            best_d[pos] = dist
            res[i, pos] = j
            if filled < k:
                filled += 1
    return result
