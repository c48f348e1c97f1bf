import math

import numpy as np
import pytest

from ssgn.hsi_core import HsiCube, synthetic_cube
from ssgn.metrics import PSNR_CAP_DB, evaluate, gaussian_window, msa, psnr, spectral_angles, ssim


def ssim_oracle(x, y):
    """Window-by-window SSIM with an explicit 2-D Gaussian kernel."""
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            a, b = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            ma, mb = np.sum(w * a), np.sum(w * b)
            va = np.sum(w * (a - ma) ** 2)
            vb = np.sum(w * (b - mb) ** 2)
            cov = np.sum(w * (a - ma) * (b - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_uniform_error(self):
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0, abs=1e-9)

    def test_identical_capped(self):
        x = np.random.default_rng(0).random((5, 5))
        assert psnr(x, x) == PSNR_CAP_DB

    def test_tiny_error_capped(self):
        assert psnr(np.zeros((2, 2)), np.full((2, 2), 1e-8)) == PSNR_CAP_DB

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_decreases_with_noise(self):
        band = synthetic_cube(32, 32, 2, seed=0).data[0]
        for seed in range(10):
            rng = np.random.default_rng(seed)
            values = [psnr(band, band + s * rng.standard_normal(band.shape)) for s in (0.02, 0.05, 0.1)]
            assert values[0] > values[1] > values[2]


class TestSsim:
    def test_identical(self):
        x = np.random.default_rng(1).random((16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_constant_bands_closed_form(self):
        a, b = 0.2, 0.6
        expected = (2 * a * b + 0.01**2) / (a * a + b * b + 0.01**2)
        assert ssim(np.full((12, 12), a), np.full((12, 12), b)) == pytest.approx(expected, abs=1e-9)

    def test_matches_window_loop(self):
        rng = np.random.default_rng(2)
        x = rng.random((14, 13))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(ssim_oracle(x, y), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        x, y = rng.random((12, 12)), rng.random((12, 12))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)

    def test_window_taps(self):
        taps = gaussian_window()
        assert taps.size == 11 and taps.sum() == pytest.approx(1.0)
        assert taps[5] == taps.max() and taps[0] == pytest.approx(taps[10])

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))


class TestMsa:
    def test_identical_is_zero(self):
        cube = synthetic_cube(8, 8, 6, seed=4)
        assert msa(cube, cube) == 0.0

    def test_orthogonal_spectra(self):
        r = np.zeros((2, 1, 1))
        t = np.zeros((2, 1, 1))
        r[0], t[1] = 1, 1
        assert msa(r, t) == pytest.approx(90.0)

    def test_scale_invariant(self):
        cube = synthetic_cube(6, 6, 5, seed=5).data.astype(np.float64) + 0.1
        assert msa(cube, 3.0 * cube) == pytest.approx(0.0, abs=1e-6)

    def test_matches_pixel_loop(self):
        rng = np.random.default_rng(6)
        r, t = rng.random((5, 4, 3)), rng.random((5, 4, 3))
        angles = []
        for m in range(4):
            for n in range(3):
                a, b = r[:, m, n], t[:, m, n]
                cos = a @ b / (math.sqrt(a @ a) * math.sqrt(b @ b))
                angles.append(math.degrees(math.acos(min(1.0, cos))))
        assert msa(r, t) == pytest.approx(np.mean(angles), abs=1e-9)

    def test_zero_pixel_counts_as_zero(self):
        r = np.ones((3, 1, 2))
        t = np.ones((3, 1, 2))
        t[:, 0, 0] = 0
        assert spectral_angles(r, t).tolist() == [[0.0, 0.0]]

    def test_single_band_rejected(self):
        with pytest.raises(ValueError):
            msa(np.ones((1, 2, 2)), np.ones((1, 2, 2)))


def test_evaluate_aggregates():
    clean = synthetic_cube(16, 16, 4, seed=7)
    noisy = HsiCube(clean.data + 0.05 * np.random.default_rng(0).standard_normal(clean.data.shape))
    report = evaluate(clean, noisy)
    assert len(report.per_band_psnr) == 4
    assert report.mpsnr == pytest.approx(np.mean(report.per_band_psnr))
    assert report.mssim == pytest.approx(np.mean(report.per_band_ssim))
    assert report.msa == pytest.approx(msa(clean, noisy))
    lines = report.render().splitlines()
    assert lines[0].startswith("MPSNR ") and len(lines) == 5 and lines[1].startswith("band 0 psnr")


def test_evaluate_identical():
    cube = synthetic_cube(12, 12, 3, seed=8)
    report = evaluate(cube, cube)
    assert report.mpsnr == PSNR_CAP_DB and report.mssim == pytest.approx(1.0) and report.msa == 0.0
