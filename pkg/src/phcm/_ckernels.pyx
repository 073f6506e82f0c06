# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil and reduction kernels.

Both kernels mirror ``phcm._pykernels`` exactly in what they compute; the
numpy versions are the reference.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def diff_axis(const double[:, :, ::1] f, double h, bint periodic):
    """Second-order first derivative along the middle axis of a (pre, m, post) array."""
    cdef Py_ssize_t npre = f.shape[0], m = f.shape[1], npost = f.shape[2]
    cdef Py_ssize_t a, i, b
    cdef double c = 0.5 / h
    out = np.empty((npre, m, npost), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for a in range(npre):
        for i in range(1, m - 1):
            for b in range(npost):
                o[a, i, b] = (f[a, i + 1, b] - f[a, i - 1, b]) * c
        if periodic:
            for b in range(npost):
                o[a, 0, b] = (f[a, 1, b] - f[a, m - 1, b]) * c
                o[a, m - 1, b] = (f[a, 0, b] - f[a, m - 2, b]) * c
        else:
            for b in range(npost):
                o[a, 0, b] = (-3.0 * f[a, 0, b] + 4.0 * f[a, 1, b] - f[a, 2, b]) * c
                o[a, m - 1, b] = (3.0 * f[a, m - 1, b] - 4.0 * f[a, m - 2, b] + f[a, m - 3, b]) * c
    return out


def weighted_sum(const double[::1] values, const double[::1] weights):
    """Compensated (Neumaier) sum of ``values * weights`` in index order."""
    cdef Py_ssize_t i, n = values.shape[0]
    cdef double s = 0.0, comp = 0.0, x, t
    for i in range(n):
        x = values[i] * weights[i]
        t = s + x
        if abs(s) >= abs(x):
            comp += (s - t) + x
        else:
            comp += (x - t) + s
        s = t
    return s + comp
