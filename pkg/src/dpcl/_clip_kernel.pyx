# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython implementation of the per-sample gradient clipping kernel.

Same contract as dpcl._kernels_numpy.clipped_grad_sums; selected at import
time by dpcl.kernels when compiled.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def clipped_grad_sums(feats, grad_logits, double clip_norm):
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    grad_logits = np.ascontiguousarray(grad_logits, dtype=np.float64)
    if feats.shape[0] != grad_logits.shape[0]:
        raise ValueError("feats and grad_logits must agree on the batch dimension")

    cdef double[:, ::1] v = feats
    cdef double[:, ::1] g = grad_logits
    cdef Py_ssize_t b = v.shape[0]
    cdef Py_ssize_t k = v.shape[1]
    cdef Py_ssize_t l = g.shape[1]

    sum_w_arr = np.zeros((l, k), dtype=np.float64)
    sum_b_arr = np.zeros(l, dtype=np.float64)
    cdef double[:, ::1] sum_w = sum_w_arr
    cdef double[::1] sum_b = sum_b_arr

    cdef Py_ssize_t i, j, m
    cdef double v_sq, g_sq, norm, scale, max_clipped = 0.0, gj

    for i in range(b):
        v_sq = 0.0
        for m in range(k):
            v_sq += v[i, m] * v[i, m]
        g_sq = 0.0
        for j in range(l):
            g_sq += g[i, j] * g[i, j]
        norm = sqrt(g_sq * (v_sq + 1.0))
        if norm > clip_norm:
            scale = clip_norm / norm
        else:
            scale = 1.0
        if norm * scale > max_clipped:
            max_clipped = norm * scale
        for j in range(l):
            gj = g[i, j] * scale
            sum_b[j] += gj
            for m in range(k):
                sum_w[j, m] += gj * v[i, m]

    return sum_w_arr, sum_b_arr, max_clipped
