# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled coefficient kernel; same contract as ``_kernels_py.weights_table``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def weights_table(const double[::1] lam_start, const double[::1] lam_end,
                  const double[::1] alpha_end, const double[:, ::1] nodes,
                  const cnp.int64_t[::1] counts, const cnp.int64_t[::1] seg_ptr,
                  const double[::1] seg_lo, const double[::1] seg_hi,
                  const double[::1] seg_tau2, const double[::1] gl_x,
                  const double[::1] gl_w):
    cdef Py_ssize_t M = nodes.shape[0], K = nodes.shape[1], N = gl_x.shape[0]
    cdef Py_ssize_t m, g, q, j, k, n
    cdef double tail, half, mid, lam, w, basis, t2, hi
    out = np.zeros((M, K))
    cdef double[:, ::1] res = out
    cdef double[::1] denom = np.empty(K)
    with nogil:
        for m in range(M):
            n = counts[m]
            for j in range(n):
                denom[j] = 1.0
                for k in range(n):
                    if k != j:
                        denom[j] *= nodes[m, j] - nodes[m, k]
            tail = 0.0
            for g in range(seg_ptr[m + 1] - 1, seg_ptr[m] - 1, -1):
                t2 = seg_tau2[g]
                hi = seg_hi[g]
                half = 0.5 * (hi - seg_lo[g])
                mid = 0.5 * (hi + seg_lo[g])
                for q in range(N):
                    lam = mid + half * gl_x[q]
                    w = alpha_end[m] * (1.0 + t2) * half * gl_w[q] * exp(
                        (lam - lam_end[m]) - tail - t2 * (hi - lam))
                    for j in range(n):
                        basis = w
                        for k in range(n):
                            if k != j:
                                basis *= lam - nodes[m, k]
                        res[m, j] += basis / denom[j]
                tail += t2 * (hi - seg_lo[g])
    return out
