# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled directional attention kernel.

Same contract as ``disan._kernels_py``: probabilities are laid out
``[k, i, j]`` with the softmax taken over ``i`` for each feature ``k`` and
query token ``j``. Fully masked ``(k, j)`` slices yield zero probabilities.
"""

import numpy as np
from libc.math cimport isfinite


def t2t_forward(const double[:, ::1] a, const double[:, ::1] b, const double[::1] bias,
                const double[:, ::1] values, const double[:, ::1] mask, double c):
    cdef Py_ssize_t d = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t k, i, j
    # scalar libm tanh/exp are several times slower than numpy's SIMD loops,
    # so the two transcendental passes stay vectorized; the masked max, the
    # normalization and the weighted sum are fused below
    a_np, b_np, bias_np = np.asarray(a), np.asarray(b), np.asarray(bias)
    t_arr = np.tanh((a_np[:, :, None] + b_np[:, None, :] + bias_np[:, None, None]) / c)
    p_arr = c * t_arr + np.asarray(mask)[None, :, :]
    s_arr = np.zeros((d, n), dtype=np.float64)
    tops_arr = np.zeros((d, n), dtype=np.float64)
    cdef double[:, ::1] s = s_arr
    cdef double[:, :, ::1] p = p_arr
    cdef double[:, ::1] tops = tops_arr
    cdef double[::1] row_top = np.empty(n, dtype=np.float64)
    cdef double ninf = -np.inf
    for k in range(d):
        for j in range(n):
            row_top[j] = ninf
        for i in range(n):
            for j in range(n):
                if p[k, i, j] > row_top[j]:
                    row_top[j] = p[k, i, j]
        for j in range(n):
            # fully masked columns: shift by 0 so exp(-inf) gives zeros
            tops[k, j] = row_top[j] if isfinite(row_top[j]) else 0.0
        for i in range(n):
            for j in range(n):
                p[k, i, j] -= tops[k, j]
    np.exp(p_arr, out=p_arr)
    for k in range(d):
        for j in range(n):
            row_top[j] = 0.0
        for i in range(n):
            for j in range(n):
                row_top[j] += p[k, i, j]
        for j in range(n):
            row_top[j] = 1.0 / row_top[j] if row_top[j] > 0.0 else 0.0
        for i in range(n):
            for j in range(n):
                p[k, i, j] *= row_top[j]
                s[k, j] += p[k, i, j] * values[k, i]
    return s_arr, p_arr, t_arr


def t2t_backward(const double[:, ::1] g, const double[:, :, ::1] p, const double[:, :, ::1] th,
                 const double[:, ::1] values):
    cdef Py_ssize_t d = g.shape[0], n = g.shape[1]
    cdef Py_ssize_t k, i, j
    cdef double inner, gpre, gl
    ga_arr = np.zeros((d, n), dtype=np.float64)
    gb_arr = np.zeros((d, n), dtype=np.float64)
    gbias_arr = np.zeros(d, dtype=np.float64)
    gv_arr = np.zeros((d, n), dtype=np.float64)
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    cdef double[::1] gbias = gbias_arr
    cdef double[:, ::1] gv = gv_arr
    for k in range(d):
        for j in range(n):
            inner = 0.0
            for i in range(n):
                inner += p[k, i, j] * values[k, i]
            for i in range(n):
                if p[k, i, j] == 0.0:
                    continue
                gv[k, i] += p[k, i, j] * g[k, j]
                gl = p[k, i, j] * g[k, j] * (values[k, i] - inner)
                gpre = gl * (1.0 - th[k, i, j] * th[k, i, j])
                ga[k, i] += gpre
                gb[k, j] += gpre
                gbias[k] += gpre
    return ga_arr, gb_arr, gbias_arr, gv_arr
