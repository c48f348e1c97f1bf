"""Hyperspectral cube container, HSIC file I/O, normalization and augmentation.

Cubes are stored band-sequential: ``data`` has shape ``(bands, rows, cols)``
so ``data[k]`` is the k-th spatial band.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HSIC"
VERSION = 1
DTYPE_F32 = 0
FLAG_NORM = 0x1
_HEADER = struct.Struct("<4sBBHIII")


class HsicFormatError(ValueError):
    """Base class for malformed HSIC files."""


class BadMagicError(HsicFormatError):
    pass


class VersionMismatchError(HsicFormatError):
    pass


class TruncatedFileError(HsicFormatError):
    pass


class ZeroDimensionError(HsicFormatError):
    pass


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HsiCube:
    """An M x N x B hyperspectral cube.

    Parameters
    ----------
    data : array of shape (B, M, N)
        Band-sequential values, held as float32.
    norm : array of shape (B, 2), optional
        Per-band ``(min, max)`` of the values before normalization. When
        present every value of ``data`` lies in [0, 1].
    """

    data: np.ndarray
    norm: np.ndarray | None = field(default=None)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (bands, rows, cols), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ZeroDimensionError(f"cube has a zero dimension: {data.shape}")
        object.__setattr__(self, "data", data)
        if self.norm is not None:
            norm = np.ascontiguousarray(self.norm, dtype=np.float32).reshape(-1, 2)
            if norm.shape[0] != data.shape[0]:
                raise ValueError(f"norm has {norm.shape[0]} entries for {data.shape[0]} bands")
            if np.any(norm[:, 0] > norm[:, 1]):
                raise ValueError("norm entries must satisfy min <= max")
            if data.min() < 0.0 or data.max() > 1.0:
                raise ValueError("normalized cube has values outside [0, 1]")
            object.__setattr__(self, "norm", norm)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """``(rows, cols, bands)``, i.e. M x N x B."""
        return self.rows, self.cols, self.bands

    def band(self, k: int) -> np.ndarray:
        return self.data[k]

    def __eq__(self, other):
        if not isinstance(other, HsiCube):
            return NotImplemented
        if (self.norm is None) != (other.norm is None):
            return False
        same_norm = self.norm is None or np.array_equal(self.norm, other.norm)
        return same_norm and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class PatchSample:
    """One training patch: a band of a noisy/clean pair plus its spectral window."""

    band_index: int
    noisy_patch: np.ndarray
    clean_patch: np.ndarray
    window_band_indices: tuple[int, ...]


def save_cube(cube: HsiCube, path) -> None:
    """Write ``cube`` to ``path`` in the HSIC format."""
    flags = FLAG_NORM if cube.norm is not None else 0
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, flags, cube.rows, cube.cols, cube.bands)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(cube.data.astype("<f4").tobytes())
        if cube.norm is not None:
            fh.write(cube.norm.astype("<f4").tobytes())


def load_cube(path) -> HsiCube:
    """Read an HSIC file written by :func:`save_cube`."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    _, version, dtype, flags, m, n, b = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise HsicFormatError(f"{path}: unsupported dtype code {dtype}")
    if 0 in (m, n, b):
        raise ZeroDimensionError(f"{path}: zero dimension in {m}x{n}x{b}")
    count = m * n * b
    has_norm = bool(flags & FLAG_NORM)
    expected = _HEADER.size + 4 * count + (8 * b if has_norm else 0)
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise HsicFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size).reshape(b, m, n)
    norm = None
    if has_norm:
        norm = np.frombuffer(raw, dtype="<f4", count=2 * b, offset=_HEADER.size + 4 * count)
        norm = norm.reshape(b, 2)
    return HsiCube(data.astype(np.float32), norm)


def normalize_per_band(cube: HsiCube) -> HsiCube:
    """Map every band independently onto [0, 1], recording its original range."""
    if cube.norm is not None:
        raise NormalizationError("cube is already normalized")
    data = cube.data.astype(np.float64)
    lo = data.min(axis=(1, 2))
    hi = data.max(axis=(1, 2))
    span = hi - lo
    out = np.zeros_like(data)
    live = span > 0
    out[live] = (data[live] - lo[live, None, None]) / span[live, None, None]
    # a constant band keeps (min, min) so the inverse restores it
    norm = np.stack([lo, np.where(live, hi, lo)], axis=1)
    return HsiCube(np.clip(out, 0.0, 1.0), norm)


def denormalize_per_band(cube: HsiCube) -> HsiCube:
    if cube.norm is None:
        raise NormalizationError("cube carries no normalization metadata")
    lo = cube.norm[:, 0].astype(np.float64)
    hi = cube.norm[:, 1].astype(np.float64)
    data = cube.data.astype(np.float64) * (hi - lo)[:, None, None] + lo[:, None, None]
    return HsiCube(data)


def extract_patches(cube: HsiCube, patch: int, stride: int) -> list[tuple[int, int, int]]:
    """Origins ``(band, row, col)`` of all full patches, band by band.

    Within a band origins run left to right, then top to bottom; patches that
    would cross the border are skipped.
    """
    if stride < 1 or patch < 1:
        raise ValueError("patch and stride must be >= 1")
    if patch > min(cube.rows, cube.cols):
        raise ValueError(f"patch {patch} larger than spatial extent {cube.rows}x{cube.cols}")
    rows = range(0, cube.rows - patch + 1, stride)
    cols = range(0, cube.cols - patch + 1, stride)
    return [(b, r, c) for b in range(cube.bands) for r in rows for c in cols]


def rotate90(band: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate counterclockwise: ``out[r, c] = band[c, N - 1 - r]`` per quarter turn."""
    if quarter_turns not in (0, 1, 2, 3):
        raise ValueError("quarter_turns must be 0, 1, 2 or 3")
    return np.rot90(band, quarter_turns).copy()


def _resize_axis(data: np.ndarray, axis: int, out_len: int, scale: float) -> np.ndarray:
    n = data.shape[axis]
    src = (np.arange(out_len) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, n - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    shape = [1] * data.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return np.take(data, i0, axis=axis) * (1.0 - frac) + np.take(data, i1, axis=axis) * frac


def resized_shape(rows: int, cols: int, scale: float) -> tuple[int, int]:
    return int(math.floor(scale * rows + 0.5)), int(math.floor(scale * cols + 0.5))


def resize_bilinear(band: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear resize with half-pixel centers; works on (..., M, N) arrays.

    Source coordinate for output index ``d`` is ``(d + 0.5) / scale - 0.5``,
    clamped into the input.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    rows, cols = band.shape[-2:]
    out_rows, out_cols = resized_shape(rows, cols, scale)
    if out_rows < 1 or out_cols < 1:
        raise ValueError(f"scale {scale} shrinks {rows}x{cols} to an empty image")
    data = np.asarray(band, dtype=np.float64)
    data = _resize_axis(data, data.ndim - 2, out_rows, scale)
    return _resize_axis(data, data.ndim - 1, out_cols, scale)


ROTATIONS = (0, 1, 2, 3)
SCALES = (0.8, 1.0, 1.2, 1.4)


def augment_cube(cube: HsiCube, quarter_turns: int, scale: float) -> np.ndarray:
    """Rotate then resize every band; returns a (B, M', N') array."""
    data = np.rot90(cube.data, quarter_turns, axes=(1, 2))
    if scale != 1.0:
        data = resize_bilinear(data, scale)
    return np.ascontiguousarray(data, dtype=np.float32)


def augmentation_variants() -> list[tuple[int, float]]:
    """All 16 rotation x scale combinations."""
    return [(r, s) for r in ROTATIONS for s in SCALES]


def synthetic_cube(rows: int, cols: int, bands: int, seed: int = 0, n_materials: int = 4) -> HsiCube:
    """Smooth test scene: smooth abundance maps mixing smooth spectra.

    The result is normalized per band.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:rows, 0:cols] / max(rows, cols)
    wl = np.linspace(0.0, 1.0, bands)
    abundances = []
    for _ in range(n_materials):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / rng.uniform(0.02, 0.08))
        abundances.append(1.0 + np.sin(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px) + 2 * blob)
    abundances = np.array(abundances)
    abundances /= abundances.sum(axis=0, keepdims=True)
    spectra = []
    for _ in range(n_materials):
        centre, width = rng.uniform(0, 1), rng.uniform(0.15, 0.5)
        spectra.append(0.2 + rng.uniform(0.2, 0.8) * np.exp(-((wl - centre) ** 2) / (2 * width**2)) + 0.2 * wl)
    data = np.einsum("pmn,pb->bmn", abundances, np.array(spectra))
    return normalize_per_band(HsiCube(data))
