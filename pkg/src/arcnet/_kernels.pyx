# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 1-D correlation along either axis of a stack of 2-D planes."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t period
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i


def correlate_rows(const double[:, :, ::1] src, const double[::1] kernel, bint valid):
    """Correlate every row of every plane with ``kernel`` (odd length).

    ``valid`` drops border columns; otherwise borders are mirror-reflected.
    """
    cdef Py_ssize_t c, i, j, t
    cdef Py_ssize_t nc = src.shape[0], h = src.shape[1], w = src.shape[2]
    cdef Py_ssize_t k = kernel.shape[0], r = k // 2
    cdef Py_ssize_t wout = w - 2 * r if valid else w
    cdef double acc
    if wout < 0:
        wout = 0
    out = np.empty((nc, h, wout), dtype=np.float64)
    cdef double[:, :, ::1] dst = out
    cdef Py_ssize_t[::1] idx = np.empty(w + 2 * r, dtype=np.intp)
    for t in range(w + 2 * r):
        idx[t] = _reflect(t - r, w)
    with nogil:
        for c in range(nc):
            for i in range(h):
                if valid:
                    for j in range(wout):
                        acc = 0.0
                        for t in range(k):
                            acc = acc + kernel[t] * src[c, i, j + t]
                        dst[c, i, j] = acc
                else:
                    for j in range(wout):
                        acc = 0.0
                        for t in range(k):
                            acc = acc + kernel[t] * src[c, i, idx[j + t]]
                        dst[c, i, j] = acc
    return out


def correlate_cols(const double[:, :, ::1] src, const double[::1] kernel, bint valid):
    """Column counterpart of :func:`correlate_rows`; walks rows contiguously."""
    cdef Py_ssize_t c, i, j, t, row
    cdef Py_ssize_t nc = src.shape[0], h = src.shape[1], w = src.shape[2]
    cdef Py_ssize_t k = kernel.shape[0], r = k // 2
    cdef Py_ssize_t hout = h - 2 * r if valid else h
    cdef double kv
    if hout < 0:
        hout = 0
    out = np.zeros((nc, hout, w), dtype=np.float64)
    cdef double[:, :, ::1] dst = out
    cdef Py_ssize_t[::1] idx = np.empty(h + 2 * r, dtype=np.intp)
    for t in range(h + 2 * r):
        idx[t] = _reflect(t - r, h)
    with nogil:
        for c in range(nc):
            for i in range(hout):
                for t in range(k):
                    kv = kernel[t]
                    row = i + t if valid else idx[i + t]
                    for j in range(w):
                        dst[c, i, j] += kv * src[c, row, j]
    return out
