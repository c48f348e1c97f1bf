"""Spatial and spectral gradient features fed to the network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hsi_core import HsiCube


@dataclass(frozen=True)
class GradientStack:
    """Network input for one band ``k``.

    ``g_z`` holds one plane per window band: ``band(window[j]) - band(k)``.
    """

    y_k: np.ndarray
    g_x: np.ndarray
    g_y: np.ndarray
    g_z: np.ndarray
    band_index: int
    window_band_indices: tuple[int, ...]

    @property
    def K(self) -> int:
        return self.g_z.shape[0]


def _cube_data(cube) -> np.ndarray:
    return cube.data if isinstance(cube, HsiCube) else np.asarray(cube)


def spatial_gradients(band: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along rows (g_x) and columns (g_y), zero on the trailing edge."""
    band = np.asarray(band)
    g_x = np.zeros_like(band)
    g_y = np.zeros_like(band)
    g_x[:-1, :] = band[1:, :] - band[:-1, :]
    g_y[:, :-1] = band[:, 1:] - band[:, :-1]
    return g_x, g_y


def spectral_window(k: int, bands: int, K: int) -> tuple[int, ...]:
    """The K band indices nearest ``k`` (excluding it), slid inward at the spectrum edges."""
    if K < 2 or K % 2:
        raise ValueError(f"K must be a positive even integer, got {K}")
    if K >= bands:
        raise ValueError(f"K={K} needs more than {bands} bands")
    if not 0 <= k < bands:
        raise IndexError(f"band {k} outside [0, {bands})")
    lo = min(max(k - K // 2, 0), bands - 1 - K)
    return tuple(z for z in range(lo, lo + K + 1) if z != k)


def spectral_gradients(cube, k: int, window) -> np.ndarray:
    """Stack of ``band(z) - band(k)`` for every z in ``window``."""
    data = _cube_data(cube)
    return data[list(window)] - data[k][None]


def build_gradient_stack(cube, k: int, K: int) -> GradientStack:
    """Assemble band ``k`` of ``cube`` (HsiCube or (B, M, N) array) with its gradients."""
    data = _cube_data(cube)
    window = spectral_window(k, data.shape[0], K)
    y_k = data[k]
    g_x, g_y = spatial_gradients(y_k)
    return GradientStack(y_k, g_x, g_y, spectral_gradients(data, k, window), k, window)


def stack_inputs(stacks) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch stacks into the three network inputs.

    Returns ``(band, spatial, spectral)`` with shapes (T, 1, P, Q), (T, 2, P, Q)
    and (T, K, P, Q).
    """
    band = np.stack([s.y_k[None] for s in stacks])
    spatial = np.stack([np.stack([s.g_x, s.g_y]) for s in stacks])
    spectral = np.stack([s.g_z for s in stacks])
    return band, spatial, spectral
