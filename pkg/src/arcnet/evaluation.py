"""Full-reference metrics (PSNR, SSIM) over optional overlap masks and directory reports."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from arcnet.errors import DataError, ShapeError
from arcnet.filters import gaussian_kernel_1d, separable_filter
from arcnet.fundus_io import FundusImage, list_images, load_image, load_mask

SSIM_WINDOW_RADIUS = 5  # 11x11 window
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def _pixels(x):
    if isinstance(x, FundusImage):
        return x.pixels
    x = np.asarray(x, dtype=np.float64)
    return x[:, :, None] if x.ndim == 2 else x


def _mask_for(a, mask):
    if mask is None:
        return np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} != image shape {a.shape[:2]}")
    return mask


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB with peak 1.0; ``inf`` for identical inputs."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    m = _mask_for(a, mask)
    if not m.any():
        raise DataError("PSNR mask is empty")
    mse = float(np.mean((a[m] - b[m]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


def ssim_map(a, b):
    """Per-channel SSIM at every window centre whose window fits in the image.

    Returns an array of shape (H - 10, W - 10, C).
    """
    a, b = _pixels(a), _pixels(b)
    r = SSIM_WINDOW_RADIUS
    if a.shape[0] < 2 * r + 1 or a.shape[1] < 2 * r + 1:
        raise ShapeError(f"image {a.shape[:2]} smaller than the {2 * r + 1}x{2 * r + 1} window")
    k = gaussian_kernel_1d(r, SSIM_SIGMA)
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mu_a = separable_filter(a, k, valid=True)
    mu_b = separable_filter(b, k, valid=True)
    var_a = separable_filter(a * a, k, valid=True) - mu_a * mu_a
    var_b = separable_filter(b * b, k, valid=True) - mu_b * mu_b
    cov = separable_filter(a * b, k, valid=True) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def window_centres(mask):
    """Centres (in valid-map coordinates) whose whole 11x11 window lies in ``mask``."""
    r = SSIM_WINDOW_RADIUS
    box = np.ones(2 * r + 1)
    inside = separable_filter(mask.astype(np.float64), box, valid=True)
    return inside >= (2 * r + 1) ** 2 - 0.5


def ssim(a, b, mask=None):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    smap = ssim_map(a, b)
    if mask is None:
        return float(smap.mean())
    centres = window_centres(_mask_for(a, mask))
    if not centres.any():
        raise DataError("no SSIM window fits inside the mask")
    return float(smap[centres].mean())


class Metric(Protocol):
    """Plug-in metric: (pred, optional reference, optional mask) -> float."""

    name: str

    def __call__(self, pred, ref=None, mask=None) -> float: ...


@dataclass
class EvalRow:
    id: str
    ssim: float
    psnr: float
    extra: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    rows: list
    skipped: list
    fingerprint: str = ""
    metric_params: dict = field(default_factory=lambda: {
        "ssim_window": 2 * SSIM_WINDOW_RADIUS + 1, "ssim_sigma": SSIM_SIGMA,
        "k1": SSIM_K1, "k2": SSIM_K2, "data_range": DATA_RANGE, "psnr_peak": DATA_RANGE})

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else math.nan

    @property
    def mean_psnr(self):
        return float(np.mean([r.psnr for r in self.rows])) if self.rows else math.nan

    def summary(self):
        extra_keys = sorted({k for r in self.rows for k in r.extra})
        means = {k: float(np.mean([r.extra[k] for r in self.rows])) for k in extra_keys}
        return {
            "n": len(self.rows),
            "mean_ssim": _json_float(self.mean_ssim),
            "mean_psnr": _json_float(self.mean_psnr),
            "extra_means": means,
            "skipped": self.skipped,
            "fingerprint": self.fingerprint,
            "metric_params": self.metric_params,
            "rows": [{**asdict(r), "psnr": _json_float(r.psnr)} for r in self.rows],
        }

    def write(self, json_path, csv_path=None):
        json_path = Path(json_path)
        json_path.write_text(json.dumps(self.summary(), indent=2))
        csv_path = Path(csv_path) if csv_path else json_path.with_suffix(".csv")
        extra_keys = sorted({k for r in self.rows for k in r.extra})
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "ssim", "psnr", *extra_keys])
            for r in self.rows:
                w.writerow([r.id, repr(r.ssim), repr(r.psnr), *[repr(r.extra[k]) for k in extra_keys]])
        return json_path, csv_path


def _json_float(v):
    # JSON has no infinity; identical pairs are reported as the string "inf"
    return "inf" if v == math.inf else v


def _by_stem(directory):
    return {p.stem: p for p in list_images(directory)}


def evaluate_dir(pred_dir, ref_dir, mask_dir=None, metrics=(), fingerprint=""):
    """Score every prediction against the reference with the same filename stem.

    Stems present on one side only, or lacking a mask when ``mask_dir`` is
    given, are listed in ``skipped``. Rows are ordered by stem.
    """
    preds, refs = _by_stem(pred_dir), _by_stem(ref_dir)
    masks = _by_stem(mask_dir) if mask_dir is not None else None
    rows, skipped = [], []
    for stem in sorted(set(preds) | set(refs)):
        if stem not in preds or stem not in refs:
            skipped.append({"id": stem, "reason": "missing prediction" if stem not in preds
                            else "missing reference"})
            continue
        if masks is not None and stem not in masks:
            skipped.append({"id": stem, "reason": "missing mask"})
            continue
        pred, ref = load_image(preds[stem]), load_image(refs[stem])
        mask = load_mask(masks[stem]) if masks is not None else None
        if pred.shape != ref.shape:
            skipped.append({"id": stem, "reason": f"shape {pred.shape} vs {ref.shape}"})
            continue
        extra = {m.name: float(m(pred.pixels, ref.pixels, mask)) for m in metrics}
        rows.append(EvalRow(stem, ssim(pred, ref, mask), psnr(pred, ref, mask), extra))
    return EvalReport(rows=rows, skipped=skipped, fingerprint=fingerprint)
