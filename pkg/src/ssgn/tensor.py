"""Dense 4-D kernels (batch, channels, height, width) with exact backward passes.

Convolutions are stride-1 cross-correlations with SAME zero padding. The
k*k tap expansion is always done on the output-gradient side, whose channel
count is small in this network, instead of building an im2col matrix of the
(wide) input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConvParams:
    weight: np.ndarray  # (out_channels, in_channels, k, k)
    bias: np.ndarray  # (out_channels,)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError(f"kernel must be (O, C, k, k), got {self.weight.shape}")
        if self.weight.shape[2] % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.weight.astype(dtype), self.bias.astype(dtype))


def _check4(x, name="x"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D (batch, channels, height, width), got shape {x.shape}")


def _pad(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    _check4(x)
    B, C, H, W = x.shape
    if C != p.in_channels:
        raise ValueError(f"input has {C} channels, kernel expects {p.in_channels}")
    O, k = p.out_channels, p.k
    r = k // 2
    xp = _pad(x, r)
    Hp, Wp = H + 2 * r, W + 2 * r
    cols = xp.transpose(1, 0, 2, 3).reshape(C, B * Hp * Wp)
    taps = (p.weight.transpose(0, 2, 3, 1).reshape(O * k * k, C) @ cols).reshape(O, k, k, B, Hp, Wp)
    out = np.zeros((O, B, H, W), dtype=np.result_type(x, p.weight))
    for u in range(k):
        for v in range(k):
            out += taps[:, u, v, :, u:u + H, v:v + W]
    return out.transpose(1, 0, 2, 3) + p.bias[None, :, None, None]


def conv2d_backward(x, p: ConvParams, grad_out, need_grad_x=True, ordered=False):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernel and bias.

    ``ordered=True`` accumulates the kernel gradient one sample at a time in
    ascending batch order, so the result does not depend on how BLAS splits
    the batch reduction. ``grad_x`` is None when ``need_grad_x`` is False.
    """
    _check4(x)
    _check4(grad_out, "grad_out")
    B, C, H, W = x.shape
    O, k = p.out_channels, p.k
    if grad_out.shape != (B, O, H, W):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match forward output {(B, O, H, W)}")
    r = k // 2
    Hp, Wp = H + 2 * r, W + 2 * r
    g = grad_out.transpose(1, 0, 2, 3)  # (O, B, H, W)

    grad_bias = g.sum(axis=(1, 2, 3)) if not ordered else sum(g[:, b].sum(axis=(1, 2)) for b in range(B))

    # shifted copies of g on the padded grid: shifted[o,u,v,b,y,x] = g[o,b,y-u,x-v]
    shifted = np.zeros((O, k, k, B, Hp, Wp), dtype=g.dtype)
    for u in range(k):
        for v in range(k):
            shifted[:, u, v, :, u:u + H, v:v + W] = g
    xp = _pad(x, r).transpose(1, 0, 2, 3)  # (C, B, Hp, Wp)
    if ordered:
        gw = np.zeros((O * k * k, C), dtype=np.result_type(x, g))
        for b in range(B):
            gw += shifted[:, :, :, b].reshape(O * k * k, Hp * Wp) @ xp[:, b].reshape(C, Hp * Wp).T
    else:
        gw = shifted.reshape(O * k * k, B * Hp * Wp) @ xp.reshape(C, B * Hp * Wp).T
    grad_kernel = gw.reshape(O, k, k, C).transpose(0, 3, 1, 2)

    grad_x = None
    if need_grad_x:
        gp = _pad(grad_out, r).transpose(1, 0, 2, 3)  # (O, B, Hp, Wp)
        taps = np.empty((O, k, k, B, H, W), dtype=g.dtype)
        for u in range(k):
            for v in range(k):
                taps[:, u, v] = gp[:, :, k - 1 - u:k - 1 - u + H, k - 1 - v:k - 1 - v + W]
        wt = p.weight.transpose(1, 0, 2, 3).reshape(C, O * k * k)
        grad_x = (wt @ taps.reshape(O * k * k, B * H * W)).reshape(C, B, H, W).transpose(1, 0, 2, 3)
    return grad_x, grad_kernel, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def concat_channels(parts) -> np.ndarray:
    parts = list(parts)
    for part in parts:
        _check4(part, "part")
    ref = parts[0].shape
    for part in parts[1:]:
        if part.shape[0] != ref[0] or part.shape[2:] != ref[2:]:
            raise ValueError(f"cannot concatenate {part.shape} with {ref}")
    return np.concatenate(parts, axis=1)


def split_channels(grad: np.ndarray, sizes) -> list[np.ndarray]:
    """Backward of :func:`concat_channels`: slice ``grad`` into parts of ``sizes`` channels."""
    if sum(sizes) != grad.shape[1]:
        raise ValueError(f"sizes {list(sizes)} do not add up to {grad.shape[1]} channels")
    edges = np.cumsum([0, *sizes])
    return [grad[:, a:b] for a, b in zip(edges[:-1], edges[1:])]


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """``0.5 * sum((pred - target)^2)`` and its gradient ``pred - target``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return 0.5 * float(np.sum(diff.astype(np.float64) ** 2)), diff


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[int, int]  # (input index, flat coordinate)
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def check_gradients(f, inputs, step=1e-4, tolerance=1e-4, value_fn=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``f(*inputs)`` returns ``(value, [grad per input])``. Each coordinate of
    each input is perturbed in place by +/-``step``; ``value_fn(*inputs)``
    (defaults to the value part of ``f``) is used for the perturbed
    evaluations. Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if value_fn is None:
        def value_fn(*args):
            return f(*args)[0]

    value, grads = f(*inputs)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite function value")
    worst, worst_at, checked = 0.0, (-1, -1), 0
    for i, (x, analytic) in enumerate(zip(inputs, grads)):
        flat = x.reshape(-1)
        if not np.shares_memory(flat, x):
            raise ValueError(f"input {i} must be a contiguous array")
        a_flat = np.asarray(analytic).reshape(-1)
        if not np.all(np.isfinite(a_flat)):
            raise FloatingPointError(f"non-finite analytic gradient for input {i}")
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            plus = value_fn(*inputs)
            flat[j] = orig - step
            minus = value_fn(*inputs)
            flat[j] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError(f"non-finite value while perturbing input {i}[{j}]")
            numeric = (plus - minus) / (2 * step)
            a = float(a_flat[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > worst:
                worst, worst_at = err, (i, j)
    return GradCheckReport(worst, worst_at, checked, tolerance)
