"""PSNR, SSIM and spectral-angle quality indices for normalized cubes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .hsi_core import HsiCube

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _bands(x) -> np.ndarray:
    return (x.data if isinstance(x, HsiCube) else np.asarray(x)).astype(np.float64)


def psnr(ref, test, peak: float = 1.0) -> float:
    ref, test = _bands(ref), _bands(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    err = np.mean((ref - test) ** 2)
    if err == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, taps):
    # separable correlation, keeping only windows that fit inside the image
    n = taps.size
    rows = sliding_window_view(img, n, axis=0) @ taps
    return sliding_window_view(rows, n, axis=1) @ taps


def ssim(ref, test, peak: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian (sigma 1.5) windows."""
    x, y = _bands(ref), _bands(test)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"band {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    taps = gaussian_window()
    mu_x, mu_y = _filter_valid(x, taps), _filter_valid(y, taps)
    var_x = _filter_valid(x * x, taps) - mu_x * mu_x
    var_y = _filter_valid(y * y, taps) - mu_y * mu_y
    cov = _filter_valid(x * y, taps) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def spectral_angles(ref, test) -> np.ndarray:
    """Per-pixel angle in degrees between the spectra of two (B, M, N) cubes."""
    r, t = _bands(ref), _bands(test)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    if r.shape[0] < 2:
        raise ValueError("spectral angles need at least 2 bands")
    dot = np.sum(r * t, axis=0)
    norms = np.sqrt(np.sum(r * r, axis=0) * np.sum(t * t, axis=0))
    cos = np.divide(dot, norms, out=np.ones_like(dot), where=norms > 0)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def msa(ref, test) -> float:
    """Mean spectral angle in degrees; pixels with a zero spectrum count as 0."""
    return float(np.mean(spectral_angles(ref, test)))


@dataclass
class MetricsReport:
    per_band_psnr: list[float]
    per_band_ssim: list[float]
    mpsnr: float
    mssim: float
    msa: float

    def render(self) -> str:
        lines = [f"MPSNR {self.mpsnr:.4f} MSSIM {self.mssim:.4f} MSA {self.msa:.4f}"]
        width = len(str(len(self.per_band_psnr) - 1))
        for k, (p, s) in enumerate(zip(self.per_band_psnr, self.per_band_ssim)):
            lines.append(f"band {k:>{width}} psnr {p:8.4f} ssim {s:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(ref, test) -> MetricsReport:
    r, t = _bands(ref), _bands(test)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    p = [psnr(a, b) for a, b in zip(r, t)]
    s = [ssim(a, b) for a, b in zip(r, t)]
    return MetricsReport(p, s, float(np.mean(p)), float(np.mean(s)), msa(r, t))
