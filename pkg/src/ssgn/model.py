"""The spatial-spectral gradient network and its checkpoint format.

Layout: three input branches (band, spatial gradients, spectral gradients),
each a multi-scale block of 3x3/5x5/7x7 convolutions with ReLU whose outputs
are concatenated. The branch outputs form the fusion; every cascaded block
sees the fusion plus the outputs of all earlier blocks. Two linear 3x3 heads
read the fusion and all block outputs: one predicts the noise of the band,
the other the clean spectral gradients of the window.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvParams,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    split_channels,
)

KERNEL_SIZES = (3, 5, 7)
BRANCHES = ("band", "spatial", "spectral")
HEAD_KERNEL = 3

MAGIC = b"SSGN"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ArchMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class SsgnArch:
    K: int = 24
    blocks: int = 5
    c_scale: int = 10

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be even and >= 2, got {self.K}")
        if self.blocks < 1 or self.c_scale < 1:
            raise ValueError("blocks and c_scale must be >= 1")

    @property
    def block_width(self) -> int:
        return len(KERNEL_SIZES) * self.c_scale

    @property
    def fusion_width(self) -> int:
        return len(BRANCHES) * self.block_width

    def block_in_channels(self, level: int) -> int:
        """Input width of cascaded block ``level`` (1-based)."""
        return self.fusion_width + (level - 1) * self.block_width

    @property
    def head_in_channels(self) -> int:
        return self.fusion_width + self.blocks * self.block_width

    def branch_in_channels(self, branch: str) -> int:
        return {"band": 1, "spatial": 2, "spectral": self.K}[branch]

    def param_shapes(self) -> dict[str, tuple[int, int, int, int]]:
        """Kernel shape of every layer, in checkpoint order."""
        shapes = {}
        for branch in BRANCHES:
            for k in KERNEL_SIZES:
                shapes[f"{branch}.k{k}"] = (self.c_scale, self.branch_in_channels(branch), k, k)
        for level in range(1, self.blocks + 1):
            for k in KERNEL_SIZES:
                shapes[f"block{level}.k{k}"] = (self.c_scale, self.block_in_channels(level), k, k)
        shapes["head_res"] = (1, self.head_in_channels, HEAD_KERNEL, HEAD_KERNEL)
        shapes["head_spec"] = (self.K, self.head_in_channels, HEAD_KERNEL, HEAD_KERNEL)
        return shapes


class SsgnModel:
    def __init__(self, arch: SsgnArch, layers: dict[str, ConvParams]):
        shapes = arch.param_shapes()
        if list(layers) != list(shapes):
            raise ArchMismatchError("layer names/order do not match the architecture")
        for name, shape in shapes.items():
            if layers[name].weight.shape != shape:
                raise ArchMismatchError(f"{name}: kernel {layers[name].weight.shape}, expected {shape}")
        self.arch = arch
        self.layers = layers

    def parameters(self) -> list[np.ndarray]:
        """Weight and bias arrays in checkpoint order (live references)."""
        out = []
        for p in self.layers.values():
            out += [p.weight, p.bias]
        return out

    def astype(self, dtype) -> "SsgnModel":
        return SsgnModel(self.arch, {n: p.astype(dtype) for n, p in self.layers.items()})

    def copy(self) -> "SsgnModel":
        return SsgnModel(self.arch, {n: ConvParams(p.weight.copy(), p.bias.copy()) for n, p in self.layers.items()})

    def _multi_scale(self, prefix, x, cache):
        pre = [conv2d_forward(x, self.layers[f"{prefix}.k{k}"]) for k in KERNEL_SIZES]
        cache[prefix] = (x, pre)
        return concat_channels([relu_forward(z) for z in pre])

    def forward(self, band, spatial, spectral, return_cache=False):
        """Run the network on batched inputs.

        ``band`` (T, 1, P, Q), ``spatial`` (T, 2, P, Q) and ``spectral``
        (T, K, P, Q) come from :func:`ssgn.gradients.stack_inputs`. Returns
        ``(res, phi)`` with shapes (T, 1, P, Q) and (T, K, P, Q).
        """
        inputs = {"band": band, "spatial": spatial, "spectral": spectral}
        for name, x in inputs.items():
            if x.ndim != 4 or x.shape[1] != self.arch.branch_in_channels(name):
                raise ValueError(f"{name} input has shape {x.shape}, expected "
                                 f"{self.arch.branch_in_channels(name)} channels")
        cache = {}
        feats = [concat_channels([self._multi_scale(b, inputs[b], cache) for b in BRANCHES])]
        for level in range(1, self.arch.blocks + 1):
            feats.append(self._multi_scale(f"block{level}", concat_channels(feats), cache))
        head_in = concat_channels(feats)
        res = conv2d_forward(head_in, self.layers["head_res"])
        phi = conv2d_forward(head_in, self.layers["head_spec"])
        if return_cache:
            cache["head_in"] = head_in
            return res, phi, cache
        return res, phi

    def _multi_scale_backward(self, prefix, grad, cache, grads, need_grad_x, ordered):
        x, pre = cache[prefix]
        grad_x = None
        parts = split_channels(grad, [self.arch.c_scale] * len(KERNEL_SIZES))
        for k, z, g in zip(KERNEL_SIZES, pre, parts):
            name = f"{prefix}.k{k}"
            gx, gw, gb = conv2d_backward(x, self.layers[name], relu_backward(z, g), need_grad_x, ordered)
            grads[name] = (gw, gb)
            if need_grad_x:
                grad_x = gx if grad_x is None else grad_x + gx
        return grad_x

    def backward(self, cache, grad_res, grad_phi, ordered=False) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Parameter gradients given the loss gradients w.r.t. both heads.

        Returns ``{layer name: (grad_weight, grad_bias)}`` in checkpoint order.
        """
        arch = self.arch
        grads = {}
        head_in = cache["head_in"]
        g_head, gw, gb = conv2d_backward(head_in, self.layers["head_res"], grad_res, True, ordered)
        grads["head_res"] = (gw, gb)
        g_spec, gw, gb = conv2d_backward(head_in, self.layers["head_spec"], grad_phi, True, ordered)
        grads["head_spec"] = (gw, gb)
        sizes = [arch.fusion_width] + [arch.block_width] * arch.blocks
        feat_grads = [g.copy() for g in split_channels(g_head + g_spec, sizes)]
        for level in range(arch.blocks, 0, -1):
            g_in = self._multi_scale_backward(f"block{level}", feat_grads[level], cache, grads, True, ordered)
            for i, g in enumerate(split_channels(g_in, sizes[:level])):
                feat_grads[i] += g
        branch_grads = split_channels(feat_grads[0], [arch.block_width] * len(BRANCHES))
        for branch, g in zip(BRANCHES, branch_grads):
            self._multi_scale_backward(branch, g, cache, grads, False, ordered)
        return {name: grads[name] for name in self.layers}


def init_model(arch: SsgnArch, seed: int) -> SsgnModel:
    """He-normal kernels (std sqrt(2 / fan_in)), zero biases; float32."""
    rng = np.random.default_rng(seed)
    layers = {}
    for name, shape in arch.param_shapes().items():
        fan_in = shape[1] * shape[2] * shape[3]
        weight = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        layers[name] = ConvParams(weight, np.zeros(shape[0], dtype=np.float32))
    return SsgnModel(arch, layers)


def zero_model(arch: SsgnArch) -> SsgnModel:
    layers = {name: ConvParams(np.zeros(shape, np.float32), np.zeros(shape[0], np.float32))
              for name, shape in arch.param_shapes().items()}
    return SsgnModel(arch, layers)


def reconstruct(y_k: np.ndarray, res_k: np.ndarray) -> np.ndarray:
    """Denoised band ``clip(y_k - res_k, 0, 1)``."""
    if np.shape(y_k) != np.shape(res_k):
        raise ValueError(f"shape mismatch {np.shape(y_k)} vs {np.shape(res_k)}")
    return np.clip(y_k - res_k, 0.0, 1.0)


# ---------------------------------------------------------------- checkpoints

_ARCH = struct.Struct("<III")
_DIMS = struct.Struct("<IIII")


def _write_tensor(fh, array, dims):
    fh.write(_DIMS.pack(*dims))
    fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _param_dims(arch):
    """(name, dims) for every stored tensor; biases are stored as (O, 1, 1, 1)."""
    out = []
    for name, shape in arch.param_shapes().items():
        out.append((name + ".weight", shape))
        out.append((name + ".bias", (shape[0], 1, 1, 1)))
    return out


def save_model(model: SsgnModel, path, adam_state=None) -> None:
    """Write a checkpoint; ``adam_state`` (an :class:`ssgn.training.AdamState`) is optional."""
    arch = model.arch
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(_ARCH.pack(arch.K, arch.blocks, arch.c_scale))
        for (_, dims), array in zip(_param_dims(arch), params):
            _write_tensor(fh, array, dims)
        if adam_state is None:
            fh.write(b"\x00")
            return
        fh.write(b"\x01")
        fh.write(struct.pack("<Q", adam_state.t))
        for moments in (adam_state.m, adam_state.v):
            for (_, dims), array in zip(_param_dims(arch), moments):
                _write_tensor(fh, array, dims)


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def tensor(self, name, dims):
        found = _DIMS.unpack(self.take(_DIMS.size))
        if found != tuple(dims):
            raise ArchMismatchError(f"{self.path}: {name} has dims {found}, architecture needs {tuple(dims)}")
        count = int(np.prod(dims))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)


def load_model(path, with_adam=False):
    """Read a checkpoint. With ``with_adam=True`` returns ``(model, adam_state or None)``."""
    from .training import AdamState

    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an SSGN checkpoint")
    version = reader.take(1)[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        arch = SsgnArch(*_ARCH.unpack(reader.take(_ARCH.size)))
    except ValueError as exc:
        raise ArchMismatchError(f"{path}: invalid architecture block ({exc})") from None
    dims = _param_dims(arch)
    arrays = [reader.tensor(name, d) for name, d in dims]
    layers = {}
    for i, name in enumerate(arch.param_shapes()):
        layers[name] = ConvParams(arrays[2 * i], arrays[2 * i + 1].reshape(-1))
    model = SsgnModel(arch, layers)
    flag = reader.take(1)[0]
    state = None
    if flag == 1:
        t = struct.unpack("<Q", reader.take(8))[0]
        m = [reader.tensor(name, d) for name, d in dims]
        v = [reader.tensor(name, d) for name, d in dims]
        m = [a.reshape(-1) if i % 2 else a for i, a in enumerate(m)]
        v = [a.reshape(-1) if i % 2 else a for i, a in enumerate(v)]
        state = AdamState(m=m, v=v, t=t)
    elif flag != 0:
        raise CheckpointError(f"{path}: invalid optimizer-state flag {flag}")
    if reader.pos != len(reader.raw):
        raise CheckpointError(f"{path}: {len(reader.raw) - reader.pos} trailing bytes")
    return (model, state) if with_adam else model
