# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Same contracts as :mod:`esdt.kernels.pure`; typed C loops pay off on the
tiny per-step matrices where python/numpy dispatch overhead dominates.
"""

from libc.math cimport exp, sqrt, INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double LN_EPS = 1e-5


def layer_norm(x, gain, bias):
    """Normalize each row of ``x`` (T, D) to zero mean / unit variance."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t t = xa.shape[0], d = xa.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((t, d))
    cdef Py_ssize_t i, j
    cdef double mean, var, dev, inv
    for i in range(t):
        mean = 0.0
        for j in range(d):
            mean += xa[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            dev = xa[i, j] - mean
            var += dev * dev
        var /= d
        inv = 1.0 / sqrt(var + LN_EPS)
        for j in range(d):
            out[i, j] = (xa[i, j] - mean) * inv * g[j] + b[j]
    return out


def causal_attention(q, k, v, n_heads):
    """Masked multi-head attention over already-projected q/k/v (T, D)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qa = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ka = np.ascontiguousarray(k, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] va = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t t = qa.shape[0], d = qa.shape[1]
    cdef Py_ssize_t nh = n_heads
    cdef Py_ssize_t hd = d // nh
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((t, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logits = np.empty(t)
    cdef Py_ssize_t h, i, j, c, base
    cdef double scale = 1.0 / sqrt(<double>hd)
    cdef double acc, mx, z, w
    for h in range(nh):
        base = h * hd
        for i in range(t):
            mx = -INFINITY
            for j in range(i + 1):
                acc = 0.0
                for c in range(hd):
                    acc += qa[i, base + c] * ka[j, base + c]
                acc *= scale
                logits[j] = acc
                if acc > mx:
                    mx = acc
            z = 0.0
            for j in range(i + 1):
                logits[j] = exp(logits[j] - mx)
                z += logits[j]
            for j in range(i + 1):
                w = logits[j] / z
                for c in range(hd):
                    out[i, base + c] += w * va[j, base + c]
    return out


def weighted_noise_sum(table, offsets, signs, weights, dim, batch_size):
    """Sum of sign*weight-scaled noise slices in fixed entry order.

    Accumulation runs entry-by-entry (the batch size does not change the
    float reduction order here, matching the pure backend's batched dot
    only up to roundoff; both backends are internally deterministic).
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tab = np.ascontiguousarray(table, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offs = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sg = np.ascontiguousarray(signs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ws = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = offs.shape[0]
    cdef Py_ssize_t d = dim
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acc = np.zeros(d)
    cdef Py_ssize_t i, j
    cdef double coeff
    cdef Py_ssize_t off
    for i in range(n):
        coeff = sg[i] * ws[i]
        off = offs[i]
        for j in range(d):
            acc[j] += coeff * tab[off + j]
    return acc
