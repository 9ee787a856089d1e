# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical hot paths (Sobol fill, ARD distances, batch EI).

Keep in sync with the pure-NumPy fallback in ``prunebo._kernels_py``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, sqrt

cnp.import_array()

SOBOL_BITS = 32

cdef double _SOBOL_SCALE = 1.0 / 4294967296.0          # 2^-32
cdef double _INV_SQRT_2PI = 0.3989422804014326779399461
cdef double _INV_SQRT_2 = 0.7071067811865475244008444


def sobol_fill(const cnp.uint64_t[:, ::1] directions, unsigned long long start, Py_ssize_t count):
    """Raw Sobol points ``start .. start+count-1`` in [0,1)^d (Gray-code order)."""
    cdef Py_ssize_t d = directions.shape[0]
    out_arr = np.empty((count, d), dtype=np.float64)
    if count == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    state_arr = np.zeros(d, dtype=np.uint64)
    cdef cnp.uint64_t[::1] state = state_arr
    cdef unsigned long long gray = start ^ (start >> 1)
    cdef unsigned long long idx
    cdef Py_ssize_t i, j
    cdef int bit, c
    for bit in range(SOBOL_BITS):
        if (gray >> bit) & 1:
            for j in range(d):
                state[j] ^= directions[j, bit]
    for i in range(count):
        for j in range(d):
            out[i, j] = <double> state[j] * _SOBOL_SCALE
        idx = start + i + 1
        c = 0
        while not (idx >> c) & 1:
            c += 1
        for j in range(d):
            state[j] ^= directions[j, c]
    return out_arr


def ard_sqdist(const double[:, ::1] x, const double[:, ::1] z, const double[::1] lengthscales):
    """Pairwise sum_j ((x_ij - z_kj) / ls_j)^2, shape (len(x), len(z))."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = z.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    inv_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] inv = inv_arr
    cdef Py_ssize_t i, k, j
    cdef double acc, diff
    for j in range(d):
        inv[j] = 1.0 / lengthscales[j]
    for i in range(n):
        for k in range(m):
            acc = 0.0
            for j in range(d):
                diff = (x[i, j] - z[k, j]) * inv[j]
                acc += diff * diff
            out[i, k] = acc
    return out_arr


def ei_values(const double[::1] mu, const double[::1] var, double best, double sigma_floor):
    """Closed-form expected improvement over ``best`` for a batch of posteriors."""
    cdef Py_ssize_t n = mu.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double sigma, delta, z, cdf, pdf, v
    for i in range(n):
        delta = mu[i] - best
        sigma = sqrt(var[i]) if var[i] > 0.0 else 0.0
        if sigma < sigma_floor:
            v = delta if delta > 0.0 else 0.0
        else:
            z = delta / sigma
            cdf = 0.5 * (1.0 + erf(z * _INV_SQRT_2))
            pdf = _INV_SQRT_2PI * exp(-0.5 * z * z)
            v = delta * cdf + sigma * pdf
            if v < 0.0:
                v = 0.0
        out[i] = v
    return out_arr
