"""Seeded simulation of Gaussian, stripe and dead-line degradations.

All random streams are derived from ``(seed, component, band)`` so results do
not depend on the order bands are processed in.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hsi_core import HsiCube

SNR_CAP_DB = 99.0

_STRIPE, _DEADLINE, _GAUSS = 1, 2, 3


class NoiseCase(enum.IntEnum):
    GAUSSIAN = 1
    STRIPE = 2
    GAUSSIAN_STRIPE = 3
    GAUSSIAN_DEADLINE = 4
    MIXTURE = 5

    @property
    def has_gaussian(self) -> bool:
        return self is not NoiseCase.STRIPE

    @property
    def has_stripes(self) -> bool:
        return self in (NoiseCase.STRIPE, NoiseCase.GAUSSIAN_STRIPE, NoiseCase.MIXTURE)

    @property
    def has_deadlines(self) -> bool:
        return self in (NoiseCase.GAUSSIAN_DEADLINE, NoiseCase.MIXTURE)


class SnrUnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    case: NoiseCase = NoiseCase.MIXTURE
    target_snr_db: float | None = None
    gaussian_sigma_range: tuple[float, float] = (0.04, 0.16)
    stripe_band_count: int = 10
    stripe_row_fraction_range: tuple[float, float] = (0.05, 0.30)
    deadline_band_count: int = 20
    deadline_width_range: tuple[int, int] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "case", NoiseCase(self.case))
        lo, hi = self.gaussian_sigma_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid sigma range {self.gaussian_sigma_range}")
        lo, hi = self.stripe_row_fraction_range
        if not (0 < lo <= hi < 1):
            raise ValueError(f"row fractions must lie in (0, 1): {self.stripe_row_fraction_range}")
        lo, hi = self.deadline_width_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid dead-line width range {self.deadline_width_range}")
        if self.stripe_band_count < 0 or self.deadline_band_count < 0:
            raise ValueError("band counts must be non-negative")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return replace(self, seed=int(seed))


@dataclass
class NoiseManifest:
    """Everything needed to reproduce a simulated degradation.

    Stripe offsets and dead lines are nominal; the applied sparse field is
    ``sparse_scale`` times the nominal one. The applied Gaussian std of band b
    is ``noise_scale * sigmas[b]``.
    """

    case: NoiseCase
    seed: int
    target_snr_db: float | None = None
    noise_scale: float = 1.0
    sparse_scale: float = 1.0
    measured_snr_db: float | None = None
    sigmas: list[float] = field(default_factory=list)
    stripes: list[tuple[int, int, float]] = field(default_factory=list)
    deadlines: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def striped_bands(self) -> list[int]:
        return sorted({b for b, _, _ in self.stripes})

    @property
    def deadline_bands(self) -> list[int]:
        return sorted({b for b, _, _ in self.deadlines})

    def to_text(self) -> str:
        lines = [
            f"case {self.case.name.lower()}",
            f"seed {self.seed}",
            f"target_snr_db {'none' if self.target_snr_db is None else repr(float(self.target_snr_db))}",
            f"noise_scale {self.noise_scale!r}",
            f"sparse_scale {self.sparse_scale!r}",
            f"measured_snr_db {'none' if self.measured_snr_db is None else repr(float(self.measured_snr_db))}",
        ]
        lines += [f"sigma {b} {s!r}" for b, s in enumerate(self.sigmas)]
        lines += [f"stripe {b} {r} {o!r}" for b, r, o in self.stripes]
        lines += [f"deadline {b} {c} {w}" for b, c, w in self.deadlines]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseManifest":
        def opt(v):
            return None if v == "none" else float(v)

        m = cls(case=NoiseCase.MIXTURE, seed=0)
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            key, vals = parts[0], parts[1:]
            if key == "case":
                m.case = NoiseCase[vals[0].upper()]
            elif key == "seed":
                m.seed = int(vals[0])
            elif key == "target_snr_db":
                m.target_snr_db = opt(vals[0])
            elif key == "noise_scale":
                m.noise_scale = float(vals[0])
            elif key == "sparse_scale":
                m.sparse_scale = float(vals[0])
            elif key == "measured_snr_db":
                m.measured_snr_db = opt(vals[0])
            elif key == "sigma":
                m.sigmas.append(float(vals[1]))
            elif key == "stripe":
                m.stripes.append((int(vals[0]), int(vals[1]), float(vals[2])))
            elif key == "deadline":
                m.deadlines.append((int(vals[0]), int(vals[1]), int(vals[2])))
            else:
                raise ValueError(f"manifest line {lineno}: unknown key {key!r}")
        return m


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])


def _data(cube) -> np.ndarray:
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube)
    return data.astype(np.float64)


def _like(cube, data: np.ndarray):
    if isinstance(cube, HsiCube):
        return HsiCube(data)
    return data.astype(np.asarray(cube).dtype)


def _pick_bands(seed: int, tag: int, bands: int, count: int) -> list[int]:
    if count > bands:
        raise ValueError(f"cannot select {count} bands out of {bands}")
    return sorted(int(b) for b in _rng(seed, tag).choice(bands, size=count, replace=False))


def _gaussian_field(shape, sigma_range, seed):
    bands, rows, cols = shape
    lo, hi = sigma_range
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid sigma range {sigma_range}")
    sigmas = np.empty(bands)
    noise = np.empty(shape)
    for b in range(bands):
        rng = _rng(seed, _GAUSS, b)
        sigmas[b] = rng.uniform(lo, hi)
        noise[b] = sigmas[b] * rng.standard_normal((rows, cols))
    return sigmas, noise


def _stripe_offsets(data, band_count, row_fraction_range, seed):
    bands, rows, _ = data.shape
    lo, hi = row_fraction_range
    stripes = []
    for b in _pick_bands(seed, _STRIPE, bands, band_count):
        rng = _rng(seed, _STRIPE, b)
        n_rows = max(1, int(math.floor(rng.uniform(lo, hi) * rows + 0.5)))
        picked = rng.choice(rows, size=n_rows, replace=False)
        n_add = (n_rows + 1) // 2
        mean = float(data[b].mean())
        stripes += [(b, int(r), mean) for r in picked[:n_add]]
        stripes += [(b, int(r), -mean) for r in picked[n_add:]]
    return stripes


def _deadline_events(shape, band_count, width_range, seed):
    bands, _, cols = shape
    w_lo, w_hi = width_range
    if w_hi >= cols:
        raise ValueError(f"dead-line width {w_hi} must be smaller than {cols} columns")
    events = []
    for b in _pick_bands(seed, _DEADLINE, bands, band_count):
        rng = _rng(seed, _DEADLINE, b)
        for _ in range(int(rng.integers(1, 4))):
            width = int(rng.integers(w_lo, w_hi + 1))
            events.append((b, int(rng.integers(0, cols - width + 1)), width))
    return events


def _apply_stripes(data, stripes):
    out = data.copy()
    for b, r, offset in stripes:
        out[b, r, :] += offset
    return out


def _apply_deadlines(data, events):
    out = data.copy()
    for b, c, w in events:
        out[b, :, c:c + w] = 0.0
    return out


def add_gaussian(cube, sigma_range, seed):
    """Add zero-mean Gaussian noise with a per-band std drawn from ``sigma_range``.

    Returns ``(noisy, sigmas)``; values are not clipped.
    """
    data = _data(cube)
    sigmas, noise = _gaussian_field(data.shape, sigma_range, seed)
    return _like(cube, data + noise), sigmas.tolist()


def add_stripes(cube, band_count, row_fraction_range, seed):
    """Offset random rows of ``band_count`` bands by +/- the band mean.

    The first half of the picked rows (rounded up) get ``+mean``, the rest
    ``-mean``. Returns ``(noisy, striped_bands)``.
    """
    data = _data(cube)
    stripes = _stripe_offsets(data, band_count, row_fraction_range, seed)
    return _like(cube, _apply_stripes(data, stripes)), sorted({b for b, _, _ in stripes})


def add_dead_lines(cube, band_count, width_range, seed):
    """Zero 1-3 column runs in each of ``band_count`` bands.

    Returns ``(noisy, events)`` with events as ``(band, col, width)``.
    """
    data = _data(cube)
    events = _deadline_events(data.shape, band_count, width_range, seed)
    return _like(cube, _apply_deadlines(data, events)), events


def measure_snr(clean, noisy) -> float:
    """``10 log10(sum clean^2 / sum (noisy - clean)^2)`` over the cube, capped at 99 dB."""
    c = _data(clean)
    n = _data(noisy)
    if c.shape != n.shape:
        raise ValueError(f"shape mismatch {c.shape} vs {n.shape}")
    noise_power = np.sum((n - c) ** 2)
    if noise_power == 0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(np.sum(c**2) / noise_power))


def _calibrate(signal_power, sparse, dense, target_db):
    """Find c so that ``min(c, 1) * sparse + c * dense`` has the target SNR."""
    a = float(np.sum(sparse**2))
    b = float(np.sum(sparse * dense))
    g = float(np.sum(dense**2))
    budget = signal_power / 10.0 ** (target_db / 10.0)

    def power(c):
        s = min(c, 1.0)
        return s * s * a + 2 * s * c * b + c * c * g

    if a == 0 and g == 0:
        raise SnrUnreachableError("no noise to calibrate against the target SNR")
    hi = 1.0
    while power(hi) < budget:
        hi *= 2.0
        if hi > 1e12 or (g == 0 and hi > 1.0):
            raise SnrUnreachableError(f"noise cannot be made strong enough for {target_db} dB")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if power(mid) < budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def simulate_case(cube, spec: NoiseSpec):
    """Degrade ``cube`` following ``spec``: stripes, then dead lines, then Gaussian noise.

    With ``spec.target_snr_db`` set, the Gaussian component is rescaled by a
    single factor ``c`` found by bisection; if even ``c = 1`` overshoots the
    noise budget the sparse component is attenuated by the same factor.
    Returns ``(noisy, manifest)``.
    """
    case = NoiseCase(spec.case)
    clean = _data(cube)
    bands = clean.shape[0]
    manifest = NoiseManifest(case=case, seed=spec.seed, target_snr_db=spec.target_snr_db)

    sparse = clean
    if case.has_stripes:
        manifest.stripes = _stripe_offsets(clean, spec.stripe_band_count, spec.stripe_row_fraction_range, spec.seed)
        sparse = _apply_stripes(sparse, manifest.stripes)
    if case.has_deadlines:
        manifest.deadlines = _deadline_events(clean.shape, spec.deadline_band_count, spec.deadline_width_range, spec.seed)
        sparse = _apply_deadlines(sparse, manifest.deadlines)

    if case.has_gaussian:
        sigmas, dense = _gaussian_field(clean.shape, spec.gaussian_sigma_range, spec.seed)
    else:
        sigmas, dense = np.zeros(bands), np.zeros_like(clean)
    manifest.sigmas = sigmas.tolist()

    c = 1.0
    if spec.target_snr_db is not None:
        c = _calibrate(float(np.sum(clean**2)), sparse - clean, dense, spec.target_snr_db)
    s = min(c, 1.0)
    manifest.noise_scale, manifest.sparse_scale = c, s
    if s == 1.0:
        noisy = sparse + c * dense
    else:
        noisy = clean + s * (sparse - clean) + c * dense
    out = _like(cube, noisy)
    manifest.measured_snr_db = measure_snr(clean, out)
    return out, manifest


def sparse_from_manifest(cube, manifest: NoiseManifest) -> np.ndarray:
    """Rebuild the sparse-only degradation of ``cube`` recorded in ``manifest``."""
    clean = _data(cube)
    sparse = _apply_deadlines(_apply_stripes(clean, manifest.stripes), manifest.deadlines)
    return clean + manifest.sparse_scale * (sparse - clean)
