"""Pure-NumPy fallback with the same signatures as the compiled ``_kernels``."""

import numpy as np


def reflect_indices(n, pad):
    """Mirror (edge-exclusive) source index for each of ``n + 2*pad`` padded slots.

    Pads longer than the axis keep bouncing, so any pad size is legal.
    """
    pos = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    pos = np.mod(pos, period)
    return np.where(pos >= n, period - pos, pos)


def correlate_rows(src, kernel, valid):
    src = np.asarray(src, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    r = kernel.shape[0] // 2
    w = src.shape[2]
    if valid:
        padded = src
        wout = max(w - 2 * r, 0)
    else:
        padded = src[:, :, reflect_indices(w, r)]
        wout = w
    out = np.zeros(src.shape[:2] + (wout,), dtype=np.float64)
    if wout == 0:
        return out
    for t, kv in enumerate(kernel):
        out += kv * padded[:, :, t:t + wout]
    return out


def correlate_cols(src, kernel, valid):
    src = np.asarray(src, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    r = kernel.shape[0] // 2
    h = src.shape[1]
    if valid:
        padded = src
        hout = max(h - 2 * r, 0)
    else:
        padded = src[:, reflect_indices(h, r), :]
        hout = h
    out = np.zeros((src.shape[0], hout, src.shape[2]), dtype=np.float64)
    if hout == 0:
        return out
    for t, kv in enumerate(kernel):
        out += kv * padded[:, t:t + hout, :]
    return out
