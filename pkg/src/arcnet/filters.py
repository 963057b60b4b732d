"""Gaussian kernels and separable filtering on image rasters.

The inner loops live in the compiled ``arcnet._kernels`` extension when it
has been built; otherwise the NumPy implementation in ``arcnet._pykernels``
is used. Set ``ARCNET_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from arcnet import _pykernels
from arcnet.errors import ParameterError

try:
    if os.environ.get("ARCNET_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("compiled kernels disabled by ARCNET_PURE_PYTHON")
    from arcnet import _kernels as _backend
    BACKEND = "compiled"
except ImportError:
    _backend = _pykernels
    BACKEND = "python"

reflect_indices = _pykernels.reflect_indices


def gaussian_kernel_1d(r, sigma):
    """Normalized 1-D Gaussian of length ``2r+1``; its outer product is the 2-D kernel."""
    if r < 0 or int(r) != r:
        raise ParameterError(f"radius must be a nonnegative integer, got {r!r}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma!r}")
    x = np.arange(-int(r), int(r) + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel(r, sigma):
    """2-D Gaussian kernel with side ``2r+1`` whose entries sum to one.

    Entries are proportional to ``exp(-(x^2+y^2) / (2 sigma^2))``; ``r=0``
    gives ``[[1.0]]``.
    """
    k = gaussian_kernel_1d(r, sigma)
    return np.outer(k, k)


def _as_planes(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return np.ascontiguousarray(x[None]), lambda y: y[0]
    if x.ndim == 3:
        return (np.ascontiguousarray(np.moveaxis(x, -1, 0)),
                lambda y: np.moveaxis(y, 0, -1))
    raise ValueError(f"expected a 2-D or HxWxC raster, got shape {x.shape}")


def separable_filter(x, kernel_1d, valid=False, backend=None):
    """Apply ``kernel_1d`` along rows and columns of an HxW or HxWxC raster.

    With ``valid=False`` the output has the input size and borders are
    mirror-reflected (``d c b | a b c d | c b a``). With ``valid=True`` only
    positions whose full window lies inside the raster are returned.
    """
    impl = _backend if backend is None else backend
    planes, restore = _as_planes(x)
    kernel_1d = np.ascontiguousarray(kernel_1d, dtype=np.float64)
    if kernel_1d.ndim != 1 or kernel_1d.shape[0] % 2 != 1:
        raise ParameterError("kernel must be 1-D with odd length")
    if kernel_1d.shape[0] == 1 and kernel_1d[0] == 1.0:
        return restore(planes.copy())
    tmp = impl.correlate_rows(planes, kernel_1d, valid)
    out = impl.correlate_cols(np.ascontiguousarray(tmp), kernel_1d, valid)
    return restore(np.asarray(out))


def gaussian_filter(x, r, sigma, backend=None):
    """Reflect-padded Gaussian blur, same size as ``x``."""
    return separable_filter(x, gaussian_kernel_1d(r, sigma), backend=backend)


def set_backend(name):
    """Switch the process-wide kernel backend ("compiled" or "python"); returns the old name."""
    global _backend, BACKEND
    old = BACKEND
    if name == "python":
        _backend = _pykernels
    elif name == "compiled":
        from arcnet import _kernels
        _backend = _kernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return old
