"""Spatial-spectral loss, Adam, patch sampling and the training loop."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .gradients import build_gradient_stack, spectral_gradients, stack_inputs
from .hsi_core import HsiCube, PatchSample, augment_cube, extract_patches, ROTATIONS, SCALES
from .model import SsgnArch, SsgnModel, init_model
from .noise import NoiseCase, NoiseSpec, simulate_case
from .tensor import mse

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


class TrainingDivergedError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------- loss

def spatial_spectral_loss(res, phi, res_target, gz_target, alpha):
    """``(1 - alpha) * spatial + alpha * spectral`` over a batch of T patches.

    ``spatial = sum_i ||res_i - res_target_i||^2 / 2T`` and
    ``spectral = sum_i sum_z ||phi_iz - gz_target_iz||^2 / 2T``.
    Returns ``(loss, grad_res, grad_phi)``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if res.shape != res_target.shape or phi.shape != gz_target.shape:
        raise ValueError("prediction/target shape mismatch")
    if res.shape[0] != phi.shape[0]:
        raise ValueError("res and phi disagree on the batch size")
    T = res.shape[0]
    spatial, d_res = mse(res, res_target)
    spectral, d_phi = mse(phi, gz_target)
    loss = ((1.0 - alpha) * spatial + alpha * spectral) / T
    return loss, d_res * ((1.0 - alpha) / T), d_phi * (alpha / T)


# ---------------------------------------------------------------------- adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One in-place Adam update of ``params`` with bias-corrected moments."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {i} at step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - BETA1**state.t
    c2 = 1.0 - BETA2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + EPS)).astype(p.dtype, copy=False)


def lr_at_epoch(lr0: float, decay: float, every: int, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * decay ** (epoch // every)


# -------------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.001
    lr0: float = 0.001
    lr_decay: float = 0.5
    decay_every: int = 10
    epochs: int = 200
    batch_size: int = 64
    batches_per_epoch: int = 0  # 0: one pass over the base patch grid
    patch: int = 25
    stride: int = 25
    K: int = 24
    blocks: int = 5
    c_scale: int = 10
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(case=NoiseCase.MIXTURE))
    seed: int = 0
    augmentation: bool = True
    deterministic_reduction: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lr0 <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("need lr0 > 0 and 0 < lr_decay <= 1")
        if min(self.decay_every, self.batch_size, self.patch, self.stride) < 1:
            raise ConfigError("decay_every, batch_size, patch and stride must be >= 1")
        if self.epochs < 0 or self.batches_per_epoch < 0:
            raise ConfigError("epochs and batches_per_epoch must be >= 0")

    @property
    def arch(self) -> SsgnArch:
        return SsgnArch(K=self.K, blocks=self.blocks, c_scale=self.c_scale)


def desk_profile(**overrides) -> TrainConfig:
    """Small network and short schedule that trains in minutes on one CPU core."""
    base = dict(K=4, blocks=2, c_scale=4, epochs=20, batch_size=8, batches_per_epoch=100,
                decay_every=8, stride=8,
                noise=NoiseSpec(case=NoiseCase.GAUSSIAN_STRIPE))
    base.update(overrides)
    return TrainConfig(**base)


def paper_profile(**overrides) -> TrainConfig:
    """Full-size settings (K=24, 5 blocks, 200 epochs); far too slow for a CPU."""
    return TrainConfig(**overrides)


_NOISE_KEYS = {
    "noise_case": ("case", lambda v: NoiseCase(int(v))),
    "noise_target_snr_db": ("target_snr_db", lambda v: None if v.lower() == "none" else float(v)),
    "noise_sigma_low": ("gaussian_sigma_range", 0),
    "noise_sigma_high": ("gaussian_sigma_range", 1),
    "noise_stripe_bands": ("stripe_band_count", int),
    "noise_stripe_fraction_low": ("stripe_row_fraction_range", 0),
    "noise_stripe_fraction_high": ("stripe_row_fraction_range", 1),
    "noise_deadline_bands": ("deadline_band_count", int),
    "noise_deadline_width_min": ("deadline_width_range", 0),
    "noise_deadline_width_max": ("deadline_width_range", 1),
}


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) on top of ``base``.

    Keys are the :class:`TrainConfig` field names, ``profile`` (``desk`` or
    ``paper``, must come first) and the ``noise_*`` keys of the noise template.
    """
    cfg = base or TrainConfig()
    fields = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "noise"}
    values: dict = {}
    noise: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "profile":
                if values or noise:
                    raise ValueError("profile must be the first setting")
                cfg = {"desk": desk_profile, "paper": paper_profile}[value]()
            elif key in fields:
                kind = type(getattr(cfg, key))
                values[key] = _parse_bool(value) if kind is bool else kind(value)
            elif key in _NOISE_KEYS:
                name, conv = _NOISE_KEYS[key]
                if isinstance(conv, int):
                    pair = list(noise.get(name, getattr(cfg.noise, name)))
                    pair[conv] = int(value) if name == "deadline_width_range" else float(value)
                    noise[name] = tuple(pair)
                else:
                    noise[name] = conv(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    try:
        if noise:
            values["noise"] = dataclasses.replace(cfg.noise, **noise)
        return dataclasses.replace(cfg, **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        if f.name == "noise":
            continue
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {('on' if v else 'off') if isinstance(v, bool) else v}")
    n = cfg.noise
    lines += [
        f"noise_case = {int(n.case)}",
        f"noise_target_snr_db = {n.target_snr_db if n.target_snr_db is not None else 'none'}",
        f"noise_sigma_low = {n.gaussian_sigma_range[0]}",
        f"noise_sigma_high = {n.gaussian_sigma_range[1]}",
        f"noise_stripe_bands = {n.stripe_band_count}",
        f"noise_stripe_fraction_low = {n.stripe_row_fraction_range[0]}",
        f"noise_stripe_fraction_high = {n.stripe_row_fraction_range[1]}",
        f"noise_deadline_bands = {n.deadline_band_count}",
        f"noise_deadline_width_min = {n.deadline_width_range[0]}",
        f"noise_deadline_width_max = {n.deadline_width_range[1]}",
    ]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ sampling

@dataclass
class Batch:
    band: np.ndarray  # (T, 1, P, P) noisy band
    spatial: np.ndarray  # (T, 2, P, P)
    spectral: np.ndarray  # (T, K, P, P)
    res_target: np.ndarray  # (T, 1, P, P) noisy - clean
    gz_target: np.ndarray  # (T, K, P, P) clean spectral gradients
    samples: list[PatchSample]


class PatchSource:
    """Clean cubes and their (lazily built) augmented variants and patch grids."""

    def __init__(self, cubes, config: TrainConfig):
        self.cubes = [c if isinstance(c, HsiCube) else HsiCube(c) for c in cubes]
        if not self.cubes:
            raise ValueError("need at least one clean cube")
        self.config = config
        for c in self.cubes:
            if c.bands <= config.K:
                raise ValueError(f"cube with {c.bands} bands is too small for K={config.K}")
        self._variants: dict = {}

    def variant(self, cube_index: int, turns: int, scale: float):
        key = (cube_index, turns, scale)
        if key not in self._variants:
            data = augment_cube(self.cubes[cube_index], turns, scale)
            cfg = self.config
            if cfg.patch > min(data.shape[1:]):
                raise ValueError(f"patch {cfg.patch} larger than augmented band {data.shape[1:]}")
            origins = extract_patches(HsiCube(data[:1]), cfg.patch, cfg.stride)
            self._variants[key] = (data, [(r, c) for _, r, c in origins])
        return self._variants[key]

    def base_samples(self) -> int:
        """Number of (cube, band, origin) triples at scale 1 without rotation."""
        return sum(len(self.variant(i, 0, 1.0)[1]) * c.bands for i, c in enumerate(self.cubes))


def _noise_for(spec: NoiseSpec, bands: int, seed: int) -> NoiseSpec:
    return dataclasses.replace(
        spec,
        seed=seed,
        stripe_band_count=min(spec.stripe_band_count, bands),
        deadline_band_count=min(spec.deadline_band_count, bands),
    )


def sample_batch(source, config: TrainConfig, epoch: int, batch_index: int) -> Batch:
    """Draw a batch fully determined by ``(config.seed, epoch, batch_index)``.

    Each sample picks a cube, an augmentation variant (if enabled), a patch
    origin and a band; noise is simulated on the full-spectrum patch with a
    seed derived from the same stream, the input stack is built from the
    noisy patch and the targets from the clean one.
    """
    if not isinstance(source, PatchSource):
        source = PatchSource(source, config)
    P, K = config.patch, config.K
    rng = np.random.default_rng([config.seed, epoch, batch_index])
    stacks, res_t, gz_t, samples = [], [], [], []
    for _ in range(config.batch_size):
        ci = int(rng.integers(len(source.cubes)))
        turns, scale = 0, 1.0
        if config.augmentation:
            turns = int(ROTATIONS[rng.integers(len(ROTATIONS))])
            scale = float(SCALES[rng.integers(len(SCALES))])
        data, origins = source.variant(ci, turns, scale)
        r, c = origins[int(rng.integers(len(origins)))]
        k = int(rng.integers(data.shape[0]))
        noise_seed = int(rng.integers(2**63))
        clean = data[:, r:r + P, c:c + P]
        noisy, _ = simulate_case(clean, _noise_for(config.noise, data.shape[0], noise_seed))
        stack = build_gradient_stack(noisy, k, K)
        stacks.append(stack)
        res_t.append((noisy[k] - clean[k])[None])
        gz_t.append(spectral_gradients(clean, k, stack.window_band_indices))
        samples.append(PatchSample(k, noisy[k], clean[k], stack.window_band_indices))
    band, spatial, spectral = stack_inputs(stacks)
    return Batch(band, spatial, spectral, np.stack(res_t), np.stack(gz_t), samples)


# ---------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        return "".join(f"epoch {e.epoch} lr {e.lr!r} loss {e.loss!r}\n" for e in self.epochs)

    def moving_average(self, window: int = 50) -> np.ndarray:
        losses = np.asarray(self.batch_losses)
        if losses.size < window:
            return np.array([losses.mean()]) if losses.size else losses
        return np.convolve(losses, np.ones(window) / window, mode="valid")


def train_step(model: SsgnModel, batch: Batch, state: AdamState, lr: float, alpha: float, ordered=True) -> float:
    res, phi, cache = model.forward(batch.band, batch.spatial, batch.spectral, return_cache=True)
    loss, g_res, g_phi = spatial_spectral_loss(res, phi, batch.res_target, batch.gz_target, alpha)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss}")
    grads = model.backward(cache, g_res, g_phi, ordered=ordered)
    flat = []
    for gw, gb in grads.values():
        flat += [gw, gb]
    adam_step(model.parameters(), flat, state, lr)
    return loss


def train(cubes, config: TrainConfig, model: SsgnModel | None = None, state: AdamState | None = None,
          callback=None):
    """Train on clean normalized cubes and return ``(model, log)``.

    Pass ``model``/``state`` to resume; both are updated in place.
    ``callback(epoch, batch_index, loss)`` is called after every step.
    """
    source = PatchSource(cubes, config)
    if model is None:
        model = init_model(config.arch, config.seed)
    if state is None:
        state = AdamState.zeros_like(model.parameters())
    n_batches = config.batches_per_epoch or math.ceil(source.base_samples() / config.batch_size)
    train_log = TrainLog()
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.lr0, config.lr_decay, config.decay_every, epoch)
        total = 0.0
        for b in range(n_batches):
            batch = sample_batch(source, config, epoch, b)
            try:
                loss = train_step(model, batch, state, lr, config.alpha, ordered=config.deterministic_reduction)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"epoch {epoch} batch {b}: {exc}") from None
            train_log.batch_losses.append(loss)
            total += loss
            if callback is not None:
                callback(epoch, b, loss)
        train_log.epochs.append(EpochRecord(epoch, lr, total / n_batches))
        log.info("epoch %d lr %g loss %.6g", epoch, lr, total / n_batches)
    return model, train_log
