"""Low/high frequency split of fundus images and the structure-guidance seam."""

from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F

from arcnet.errors import ParameterError
from arcnet.filters import gaussian_filter, gaussian_kernel_1d, reflect_indices
from arcnet.fundus_io import FundusImage

DEFAULT_RP = 26
DEFAULT_SIGMA_P = 9.0


@dataclass
class FrequencyPair:
    lfc: np.ndarray
    hfc: np.ndarray
    r_p: int
    sigma_p: float


def _check(r_p, sigma_p):
    if r_p < 1 or int(r_p) != r_p:
        raise ParameterError(f"r_P must be an integer >= 1, got {r_p}")
    if not sigma_p > 0:
        raise ParameterError(f"sigma_P must be positive, got {sigma_p}")


def decompose(img, r_p=DEFAULT_RP, sigma_p=DEFAULT_SIGMA_P):
    """Split ``img`` into a Gaussian low-pass part and the residual detail.

    ``lfc + hfc`` reproduces the input up to float rounding.
    """
    _check(r_p, sigma_p)
    pixels = img.pixels if isinstance(img, FundusImage) else np.asarray(img, dtype=np.float64)
    lfc = gaussian_filter(pixels, r_p, sigma_p)
    return FrequencyPair(lfc=lfc, hfc=pixels - lfc, r_p=int(r_p), sigma_p=float(sigma_p))


def lowpass_torch(x, r_p=DEFAULT_RP, sigma_p=DEFAULT_SIGMA_P):
    """Differentiable reflect-padded Gaussian blur of an (N, C, H, W) tensor."""
    _check(r_p, sigma_p)
    n, c, h, w = x.shape
    k = torch.as_tensor(gaussian_kernel_1d(r_p, sigma_p), dtype=x.dtype, device=x.device)
    rows = torch.as_tensor(reflect_indices(h, r_p), device=x.device)
    cols = torch.as_tensor(reflect_indices(w, r_p), device=x.device)
    xp = x.index_select(2, rows).index_select(3, cols)
    xp = xp.reshape(n * c, 1, xp.shape[2], xp.shape[3])
    xp = F.conv2d(xp, k.view(1, 1, 1, -1))
    xp = F.conv2d(xp, k.view(1, 1, -1, 1))
    return xp.reshape(n, c, h, w)


def hfc_torch(x, r_p=DEFAULT_RP, sigma_p=DEFAULT_SIGMA_P):
    return x - lowpass_torch(x, r_p, sigma_p)


class StructureGuidance(Protocol):
    """Maps an image to a guidance raster of the same spatial size.

    ``__call__`` works on HxWxC NumPy arrays in [0, 1]; ``torch`` works on
    (N, C, H, W) tensors and must be differentiable, because the structure
    loss back-propagates through it.
    """

    channels: int

    def __call__(self, pixels: np.ndarray) -> np.ndarray: ...

    def torch(self, x: torch.Tensor) -> torch.Tensor: ...


class HFCGuidance:
    """High-frequency component guidance with a Gaussian low-pass of radius ``r_p``."""

    channels = 3

    def __init__(self, r_p=DEFAULT_RP, sigma_p=DEFAULT_SIGMA_P):
        _check(r_p, sigma_p)
        self.r_p = int(r_p)
        self.sigma_p = float(sigma_p)

    def __call__(self, pixels):
        return decompose(pixels, self.r_p, self.sigma_p).hfc

    def torch(self, x):
        return hfc_torch(x, self.r_p, self.sigma_p)

    def __repr__(self):
        return f"HFCGuidance(r_p={self.r_p}, sigma_p={self.sigma_p})"
