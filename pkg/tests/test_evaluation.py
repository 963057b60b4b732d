import json
import math

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from arcnet.errors import DataError, ShapeError
from arcnet.evaluation import evaluate_dir, psnr, ssim
from arcnet.fundus_io import FundusImage, save_image, save_mask


def ssim_oracle(a, b, mask=None):
    """Windowed SSIM from explicit 11x11 patches and a directly evaluated 2-D Gaussian."""
    y, x = np.mgrid[-5:6, -5:6]
    w = np.exp(-(x ** 2 + y ** 2) / (2 * 1.5 ** 2))
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for c in range(a.shape[2]):
        pa = sliding_window_view(a[:, :, c], (11, 11))
        pb = sliding_window_view(b[:, :, c], (11, 11))
        ma = np.tensordot(pa, w, axes=([2, 3], [0, 1]))
        mb = np.tensordot(pb, w, axes=([2, 3], [0, 1]))
        va = np.tensordot((pa - ma[..., None, None]) ** 2, w, axes=([2, 3], [0, 1]))
        vb = np.tensordot((pb - mb[..., None, None]) ** 2, w, axes=([2, 3], [0, 1]))
        cov = np.tensordot((pa - ma[..., None, None]) * (pb - mb[..., None, None]), w,
                           axes=([2, 3], [0, 1]))
        smap = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))
        if mask is not None:
            inside = sliding_window_view(mask, (11, 11)).all(axis=(2, 3))
            smap = smap[inside]
        vals.append(smap.mean())
    return float(np.mean(vals))


def test_psnr_examples(rng):
    a = rng.random((16, 16, 3))
    assert psnr(a, a) == math.inf
    z = np.zeros((8, 8, 3))
    assert psnr(z, z + 0.1) == pytest.approx(20.0, abs=1e-9)
    b = rng.random((16, 16, 3))
    mse = sum((p - q) ** 2 for p, q in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-6)


def test_psnr_mask(rng):
    a, b = rng.random((10, 10, 3)), rng.random((10, 10, 3))
    m = np.zeros((10, 10), dtype=bool)
    m[2:5, 3:9] = True
    mse = np.mean((a[m] - b[m]) ** 2)
    assert psnr(a, b, m) == pytest.approx(10 * math.log10(1 / mse))
    with pytest.raises(DataError):
        psnr(a, b, np.zeros((10, 10), dtype=bool))


def test_psnr_decreases_with_noise(rng):
    a = rng.random((32, 32, 3)) * 0.5 + 0.25
    noise = rng.uniform(-1, 1, a.shape)
    vals = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.1, 0.2)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_ssim_identical_and_constant_extremes(rng):
    a = rng.random((32, 32, 3))
    assert ssim(a, a) == 1.0
    c1 = 0.01 ** 2
    got = ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3)))
    assert got == pytest.approx(c1 / (1 + c1), rel=1e-9)
    assert got == pytest.approx(9.999e-5, rel=1e-4)


def test_ssim_matches_window_oracle(rng):
    for _ in range(5):
        a, b = rng.random((40, 36, 3)), rng.random((40, 36, 3))
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-5)


def test_ssim_masked_oracle(rng):
    a, b = rng.random((40, 40, 3)), rng.random((40, 40, 3))
    m = np.zeros((40, 40), dtype=bool)
    m[3:30, 5:38] = True
    assert ssim(a, b, m) == pytest.approx(ssim_oracle(a, b, m), abs=1e-5)


def test_ssim_symmetry_and_full_mask(rng):
    a, b = rng.random((24, 24, 3)), rng.random((24, 24, 3))
    assert ssim(a, b) == ssim(b, a)
    full = np.ones((24, 24), dtype=bool)
    assert abs(ssim(a, b, full) - ssim(a, b)) <= 1e-9
    assert abs(psnr(a, b, full) - psnr(a, b)) <= 1e-9


def test_ssim_errors(rng):
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))
    with pytest.raises(DataError):
        ssim(rng.random((16, 16, 3)), rng.random((16, 16, 3)), np.zeros((16, 16), dtype=bool))


def _write_planted(tmp_path):
    pred, ref = tmp_path / "pred", tmp_path / "ref"
    pred.mkdir()
    ref.mkdir()
    for name, frac in (("a", 0.01), ("b", 0.04), ("c", 0.25)):
        r = np.zeros((100, 100, 3))
        p = r.copy()
        p.reshape(-1, 3)[: int(frac * 10_000)] = 1.0  # MSE == frac exactly
        save_image(FundusImage(r), ref / f"{name}.png")
        save_image(FundusImage(p), pred / f"{name}.png")
    return pred, ref


def test_evaluate_dir_planted_mse(tmp_path):
    pred, ref = _write_planted(tmp_path)
    save_image(FundusImage(np.zeros((100, 100, 3))), pred / "only_pred.png")
    report = evaluate_dir(pred, ref)
    assert [r.id for r in report.rows] == ["a", "b", "c"]
    np.testing.assert_allclose([r.psnr for r in report.rows], [20.0, 13.979400, 6.020600],
                               atol=1e-5)
    assert report.mean_psnr == pytest.approx(np.mean([r.psnr for r in report.rows]), abs=1e-9)
    assert report.skipped == [{"id": "only_pred", "reason": "missing reference"}]
    json_path, csv_path = report.write(tmp_path / "report.json")
    data = json.loads(json_path.read_text())
    assert data["n"] == 3 and len(data["rows"]) == 3
    assert csv_path.read_text().splitlines()[0] == "id,ssim,psnr"


def test_evaluate_dir_identical_and_empty(tmp_path, rng):
    d1, d2 = tmp_path / "x", tmp_path / "y"
    d1.mkdir()
    d2.mkdir()
    for i in range(2):
        save_image(FundusImage(rng.random((20, 20, 3))), d1 / f"{i}.png")
    same = evaluate_dir(d1, d1)
    assert same.mean_ssim == 1.0 and same.mean_psnr == math.inf
    assert json.loads(json.dumps(same.summary()))["mean_psnr"] == "inf"
    save_image(FundusImage(rng.random((20, 20, 3))), d2 / "other.png")
    empty = evaluate_dir(d1, d2)
    assert empty.rows == [] and len(empty.skipped) == 3


def test_evaluate_dir_masks_and_plugin(tmp_path):
    pred, ref = _write_planted(tmp_path)
    masks = tmp_path / "masks"
    masks.mkdir()
    for name in ("a", "b"):
        save_mask(np.ones((100, 100), dtype=bool), masks / f"{name}.png")

    class MaxAbs:
        name = "maxabs"

        def __call__(self, pred, ref=None, mask=None):
            return float(np.abs(pred - ref).max())

    report = evaluate_dir(pred, ref, masks, metrics=[MaxAbs()])
    assert [r.id for r in report.rows] == ["a", "b"]
    assert report.rows[0].extra == {"maxabs": 1.0}
    assert {"id": "c", "reason": "missing mask"} in report.skipped
