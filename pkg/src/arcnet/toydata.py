"""Procedural fundus-like images and toy corpora for smoke runs and demos."""

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from arcnet.degradation import SamplingRanges, sample_params, simulate_cataract
from arcnet.filters import gaussian_filter
from arcnet.fundus_io import DatasetManifest, FundusImage, ManifestEntry, save_image

# harsher haze plus lens yellowing for the stand-in "real cataract" domain
TARGET_RANGES = SamplingRanges(alpha=(0.6, 0.85), beta=(0.3, 0.6), r_b=(4, 12), r_l=(25, 45))
TARGET_TINT = np.array([1.0, 0.95, 0.8])


def _vessels(draw, rng, start, angle, width, length, depth, scale):
    if depth == 0 or width < 0.6:
        return
    x, y = start
    pts = [(x, y)]
    for _ in range(int(length)):
        angle += rng.normal(0, 0.12)
        x += np.cos(angle) * scale
        y += np.sin(angle) * scale
        pts.append((x, y))
    draw.line(pts, fill=255, width=max(1, int(round(width * scale))))
    for frac in (0.35, 0.7):
        p = pts[int(len(pts) * frac)]
        turn = rng.choice([-1, 1]) * rng.uniform(0.4, 0.9)
        _vessels(draw, rng, p, angle + turn, width * 0.7, length * 0.6, depth - 1, scale)


def toy_fundus(size, seed):
    """Clear synthetic fundus: orange disk, optic disc, branching dark vessels."""
    rng = np.random.default_rng(seed)
    ss = 4
    big = size * ss
    canvas = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(canvas)
    cx, cy = big / 2 + rng.normal(0, big * 0.02), big / 2 + rng.normal(0, big * 0.02)
    odx = cx + rng.choice([-1, 1]) * big * rng.uniform(0.15, 0.22)
    ody = cy + rng.normal(0, big * 0.03)
    for k in range(rng.integers(5, 8)):
        ang = rng.uniform(0, 2 * np.pi)
        _vessels(draw, rng, (odx, ody), ang, width=rng.uniform(2.0, 3.2),
                 length=size * 0.35, depth=3, scale=ss)
    vessel = np.asarray(canvas.resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.hypot(yy - cy / ss, xx - cx / ss) / (size * 0.46)
    fov = r <= 1.0
    base = np.array([0.78, 0.36, 0.16]) * rng.uniform(0.85, 1.1)
    shade = (1.0 - 0.35 * r ** 2)[:, :, None]
    texture = gaussian_filter(rng.normal(0, 0.06, (size, size)), 6, 2.5)[:, :, None]
    img = base[None, None, :] * shade + texture
    od = np.exp(-(np.hypot(yy - ody / ss, xx - odx / ss) / (size * 0.05)) ** 2)[:, :, None]
    img = img + od * np.array([0.25, 0.45, 0.35])
    img = img * (1.0 - 0.55 * vessel[:, :, None] * np.array([0.6, 1.0, 1.0]))
    img = np.clip(img, 0.0, 1.0) * fov[:, :, None]
    return FundusImage(img, fov)


def target_degrade(clear, seed):
    """Stand-in real cataract: stronger haze followed by lens yellowing."""
    h, w = clear.shape
    hazy = simulate_cataract(clear, sample_params(h, w, seed, TARGET_RANGES))
    return hazy.with_pixels(np.clip(hazy.pixels * TARGET_TINT, 0.0, 1.0))


def make_toy_corpus(root, n_source=32, n_target=16, n_heldout=16, size=128, seed=0):
    """Write a toy corpus and its manifests under ``root``.

    Layout: ``source/clear`` + ``source/degraded`` (Eq.-4 pairs),
    ``target/`` (unpaired target-style images), ``heldout/degraded`` +
    ``heldout/clear`` (target-style pairs for evaluation). Returns a dict of
    manifest paths and directories.
    """
    root = Path(root)
    dirs = {k: root / k for k in ("source/clear", "source/degraded", "target",
                                  "heldout/degraded", "heldout/clear")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    n_total = n_source + n_target + n_heldout
    seeds = [int(v) for v in ss.generate_state(2 * n_total)]
    src_entries, tgt_entries, held_entries = [], [], []
    for i in range(n_total):
        clear = toy_fundus(size, seeds[2 * i])
        name = f"img{i:03d}.png"
        if i < n_source:
            deg = simulate_cataract(clear, sample_params(size, size, seeds[2 * i + 1]))
            save_image(clear, dirs["source/clear"] / name)
            save_image(deg, dirs["source/degraded"] / name)
            src_entries += [ManifestEntry(f"source/clear/{name}", "source-clear", name[:-4]),
                            ManifestEntry(f"source/degraded/{name}", "source-degraded", name[:-4])]
        elif i < n_source + n_target:
            save_image(target_degrade(clear, seeds[2 * i + 1]), dirs["target"] / name)
            tgt_entries.append(ManifestEntry(f"target/{name}", "target", name[:-4]))
        else:
            save_image(target_degrade(clear, seeds[2 * i + 1]), dirs["heldout/degraded"] / name)
            save_image(clear, dirs["heldout/clear"] / name)
            held_entries += [ManifestEntry(f"heldout/degraded/{name}", "target", name[:-4]),
                             ManifestEntry(f"heldout/clear/{name}", "reference", name[:-4])]
    out = {}
    for key, entries in (("source", src_entries), ("target", tgt_entries),
                         ("heldout", held_entries)):
        m = DatasetManifest(str(root), seed, entries).validate()
        path = root / f"{key}_manifest.json"
        m.save(path)
        out[f"{key}_manifest"] = path
    out.update({k.replace("/", "_"): v for k, v in dirs.items()})
    return out
