"""Fundus image container, 8-bit file I/O, field-of-view masks and manifests."""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from arcnet.errors import ConfigError, DataError, FormatError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
ROLES = ("source-clear", "source-degraded", "target", "reference")


@dataclass
class FundusImage:
    """RGB raster in [0, 1], shape (H, W, 3), with an optional boolean FOV mask."""

    pixels: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise FormatError(f"expected HxWx3 pixels, got shape {self.pixels.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.pixels.shape[:2]:
                raise FormatError(
                    f"mask shape {self.mask.shape} != image shape {self.pixels.shape[:2]}")

    @property
    def shape(self):
        return self.pixels.shape[:2]

    def mask_or_full(self):
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask

    def with_pixels(self, pixels):
        return FundusImage(pixels, None if self.mask is None else self.mask.copy())


def to_uint8(pixels):
    """Quantize [0, 1] floats to bytes, rounding half up."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_image(path, mask_path=None):
    """Read an 8-bit RGB PNG/JPEG into a :class:`FundusImage` (v -> v/255).

    Grayscale and other non-RGB layouts raise :class:`FormatError`. Alpha
    channels are dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("RGBA", "RGBa"):
                im = im.convert("RGB")
            elif mode != "RGB":
                raise FormatError(f"{path}: expected a 3-channel image, got mode {mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    mask = None
    if mask_path is not None:
        mask = load_mask(mask_path)
    return FundusImage(arr.astype(np.float64) / 255.0, mask)


def load_mask(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_image(img, path):
    """Write ``img`` as 8-bit RGB; the format follows the file suffix."""
    pixels = img.pixels if isinstance(img, FundusImage) else np.asarray(img)
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise OSError(f"directory does not exist: {path.parent}")
    Image.fromarray(to_uint8(pixels), mode="RGB").save(path)


def save_mask(mask, path):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def _disk(radius):
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius


def estimate_fov_mask(img, threshold=0.05, radius=5):
    """Field-of-view mask: channel max >= threshold, then a disk closing.

    The raster is edge-padded before closing so the image border is not
    eroded away.
    """
    pixels = img.pixels if isinstance(img, FundusImage) else np.asarray(img)
    raw = pixels.max(axis=2) >= threshold
    padded = np.pad(raw, radius, mode="edge")
    closed = ndimage.binary_closing(padded, structure=_disk(radius))
    return closed[radius:-radius, radius:-radius].copy()


@dataclass
class ManifestEntry:
    path: str
    role: str
    pair_id: Optional[str] = None

    def to_dict(self):
        d = {"path": self.path, "role": self.role}
        if self.pair_id is not None:
            d["pair_id"] = self.pair_id
        return d


@dataclass
class DatasetManifest:
    root: str
    seed: int = 0
    entries: list = field(default_factory=list)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else Path(self.root) / p

    def by_role(self, role):
        return [e for e in self.entries if e.role == role]

    def pairs(self):
        """(degraded, clear) entry pairs, matched by pair id."""
        clear = {e.pair_id: e for e in self.by_role("source-clear")}
        return [(e, clear[e.pair_id]) for e in self.by_role("source-degraded")
                if e.pair_id in clear]

    def validate(self):
        for e in self.entries:
            if e.role not in ROLES:
                raise ConfigError(f"unknown role {e.role!r} for {e.path}")
            if not self.resolve(e).is_file():
                raise DataError(f"missing file: {self.resolve(e)}")
        clear_ids = [e.pair_id for e in self.by_role("source-clear") if e.pair_id is not None]
        for e in self.by_role("source-degraded"):
            if e.pair_id is None:
                continue
            n = clear_ids.count(e.pair_id)
            if n != 1:
                raise ConfigError(
                    f"degraded entry {e.path} pair id {e.pair_id!r} matches {n} clear entries")
        return self

    def to_dict(self):
        return {"root": str(self.root), "seed": int(self.seed),
                "entries": [e.to_dict() for e in self.entries]}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, d):
        try:
            entries = [ManifestEntry(e["path"], e["role"], e.get("pair_id"))
                       for e in d["entries"]]
            return cls(root=d["root"], seed=int(d.get("seed", 0)), entries=entries)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        m = cls.from_dict(d)
        if not Path(m.root).is_absolute():
            m.root = str((path.parent / m.root).resolve())
        return m


def list_images(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def manifest_from_dirs(root, seed=0, clear_dir=None, degraded_dir=None,
                       target_dir=None, reference_dir=None):
    """Build a manifest from role directories; pairs are matched by filename stem.

    Directories are given relative to ``root`` (or absolute). The listing is
    sorted, so repeated calls on the same tree produce identical entries.
    """
    root = Path(root)
    entries = []
    for role, sub in (("source-clear", clear_dir), ("source-degraded", degraded_dir),
                      ("target", target_dir), ("reference", reference_dir)):
        if sub is None:
            continue
        d = Path(sub) if Path(sub).is_absolute() else root / sub
        for p in list_images(d):
            entries.append(ManifestEntry(os.path.relpath(p, root), role, p.stem))
    return DatasetManifest(str(root), seed, entries).validate()


def resize_image(img, size):
    """Bilinear resize to ``size`` = (height, width); masks use nearest neighbour."""
    h, w = size
    pix = img.pixels if isinstance(img, FundusImage) else np.asarray(img, dtype=np.float64)
    if pix.shape[:2] == (h, w):
        return img if isinstance(img, FundusImage) else FundusImage(pix)
    chans = [np.asarray(Image.fromarray(pix[:, :, c].astype(np.float32), mode="F")
                        .resize((w, h), Image.BILINEAR), dtype=np.float64)
             for c in range(pix.shape[2])]
    mask = None
    if isinstance(img, FundusImage) and img.mask is not None:
        mask = np.asarray(Image.fromarray(img.mask.astype(np.uint8) * 255)
                          .resize((w, h), Image.NEAREST)) >= 128
    return FundusImage(np.clip(np.stack(chans, axis=-1), 0.0, 1.0), mask)
