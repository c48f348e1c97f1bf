"""Whole-cube denoising: every band is passed through the network once."""
from __future__ import annotations

import numpy as np

from .gradients import build_gradient_stack, stack_inputs
from .hsi_core import HsiCube, denormalize_per_band, normalize_per_band
from .model import SsgnModel, reconstruct


def denoise_array(model: SsgnModel, data: np.ndarray, batch: int = 1) -> np.ndarray:
    """Denoise a (B, M, N) cube already in the normalized domain.

    Bands are processed whole (the network is fully convolutional), ``batch``
    bands per forward pass. Output values are clipped to [0, 1].
    """
    data = np.asarray(data, dtype=np.float32)
    K = model.arch.K
    if data.shape[0] <= K:
        raise ValueError(f"cube has {data.shape[0]} bands, model needs more than K={K}")
    out = np.empty_like(data)
    for start in range(0, data.shape[0], batch):
        ks = range(start, min(start + batch, data.shape[0]))
        stacks = [build_gradient_stack(data, k, K) for k in ks]
        res, _ = model.forward(*stack_inputs(stacks))
        for i, k in enumerate(ks):
            out[k] = reconstruct(data[k], res[i, 0])
    return out


def denoise_cube(model: SsgnModel, cube: HsiCube, assume_normalized: bool = False) -> HsiCube:
    """Normalize (unless the cube carries a range or ``assume_normalized``), denoise, map back.

    Cubes with stored per-band ranges come back denormalized, matching the
    scale of the input file.
    """
    if assume_normalized:
        return HsiCube(denoise_array(model, cube.data))
    work = cube if cube.norm is not None else normalize_per_band(cube)
    restored = HsiCube(denoise_array(model, work.data), work.norm)
    if cube.norm is not None:
        return restored
    return denormalize_per_band(restored)
