"""Cataract-like degradation of clear fundus images.

Each channel of a clear image ``s`` is mapped to

    alpha * (s_c * g_B) + beta * (J * g_L) * (L_c - s_c)

where ``*`` is a reflect-padded Gaussian convolution, ``J`` is a radial
distance panel centred on ``panel_center`` and ``L_c`` is the brightest
value of the channel (inside the FOV mask, when one is attached).
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from arcnet.errors import ParameterError
from arcnet.filters import gaussian_filter, gaussian_kernel
from arcnet.fundus_io import FundusImage


__all__ = ["DegradationParams", "SamplingRanges", "build_panel", "gaussian_kernel",
           "linked_sigma", "sample_params", "simulate_cataract"]


def linked_sigma(r):
    """Spatial constant paired with a sampled radius: (r + 1) / 3 (26 -> 9)."""
    return (r + 1) / 3.0


@dataclass
class DegradationParams:
    alpha: float
    beta: float
    panel_center: tuple
    r_b: int
    sigma_b: float
    r_l: int
    sigma_l: float
    seed: int = 0

    def validate(self, height=None, width=None):
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")
        for name, r, sigma in (("B", self.r_b, self.sigma_b), ("L", self.r_l, self.sigma_l)):
            if r < 0 or int(r) != r:
                raise ParameterError(f"r_{name} must be a nonnegative integer, got {r}")
            if r > 0 and not sigma > 0:
                raise ParameterError(f"sigma_{name} must be positive, got {sigma}")
        if height is not None:
            a, b = self.panel_center
            if not (0 <= a < height and 0 <= b < width):
                raise ParameterError(
                    f"panel center {self.panel_center} outside {height}x{width} image")
        return self

    def to_dict(self):
        d = asdict(self)
        d["panel_center"] = [int(v) for v in self.panel_center]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["panel_center"] = tuple(int(v) for v in d["panel_center"])
        return cls(**d)


@dataclass
class SamplingRanges:
    alpha: tuple = (0.6, 0.95)
    beta: tuple = (0.2, 0.6)
    center_box: float = 0.5
    r_b: tuple = (3, 11)
    r_l: tuple = (20, 40)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def build_panel(height, width, center):
    """Radial distance from ``center = (row, col)``, divided by its maximum."""
    a, b = center
    if not (0 <= a < height and 0 <= b < width):
        raise ParameterError(f"panel center {center} outside {height}x{width} raster")
    i = np.arange(height, dtype=np.float64)[:, None]
    j = np.arange(width, dtype=np.float64)[None, :]
    dist = np.sqrt((i - a) ** 2 + (j - b) ** 2)
    peak = dist.max()
    return dist / peak if peak > 0 else dist


def _blur(x, r, sigma):
    if r == 0:
        return np.array(x, dtype=np.float64, copy=True)
    return gaussian_filter(x, r, sigma)


def simulate_cataract(s, p, panel=None):
    """Synthesize a cataract-like image from clear image ``s``.

    ``s`` may be a :class:`FundusImage` or an HxWx3 array. Returns a new
    :class:`FundusImage` clamped to [0, 1] carrying the same mask. A
    precomputed normalized ``panel`` overrides the one built from
    ``p.panel_center``.
    """
    img = s if isinstance(s, FundusImage) else FundusImage(s)
    h, w = img.shape
    p.validate(h, w)
    pix = img.pixels
    inside = img.mask_or_full()
    if not inside.any():
        inside = np.ones_like(inside)
    peak = pix[inside].max(axis=0)  # L_c per channel

    if panel is None:
        panel = build_panel(h, w, p.panel_center)
    haze = _blur(panel, p.r_l, p.sigma_l)
    smooth = _blur(pix, p.r_b, p.sigma_b)
    out = p.alpha * smooth + p.beta * haze[:, :, None] * (peak[None, None, :] - pix)
    return img.with_pixels(np.clip(out, 0.0, 1.0))


def sample_params(height, width, seed, ranges=None):
    """Draw degradation parameters deterministically from ``seed``."""
    ranges = ranges or SamplingRanges()
    rng = np.random.default_rng(seed)
    alpha = float(rng.uniform(*ranges.alpha))
    beta = float(rng.uniform(*ranges.beta))
    half = ranges.center_box / 2.0
    a = int(rng.integers(int(np.floor(height * (0.5 - half))),
                         max(int(np.ceil(height * (0.5 + half))), 1)))
    b = int(rng.integers(int(np.floor(width * (0.5 - half))),
                         max(int(np.ceil(width * (0.5 + half))), 1)))
    a, b = min(a, height - 1), min(b, width - 1)
    r_b = int(rng.integers(ranges.r_b[0], ranges.r_b[1] + 1))
    r_l = int(rng.integers(ranges.r_l[0], ranges.r_l[1] + 1))
    return DegradationParams(alpha=alpha, beta=beta, panel_center=(a, b),
                             r_b=r_b, sigma_b=linked_sigma(r_b),
                             r_l=r_l, sigma_l=linked_sigma(r_l), seed=int(seed))
