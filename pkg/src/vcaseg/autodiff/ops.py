"""Differentiable operations on :class:`Tensor`.

Each op computes its forward result eagerly and, when a tape is active,
registers a closure that maps the upstream gradient to input gradients.
Broadcasting is deliberately limited to channel bias/affine terms; everything
else requires exact shape agreement.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from .tensor import Tensor, record_op


def _as_const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data + b)
        return record_op(out, [a], lambda g: a.accumulate_grad(g) if a.requires_grad else None)
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return record_op(out, [a, b], bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return record_op(out, [a, b], bwd)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data * b)
        return record_op(out, [a], lambda g: a.accumulate_grad(g * b) if a.requires_grad else None)
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return record_op(out, [a, b], bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return record_op(out, [a], lambda g: a.accumulate_grad(-g) if a.requires_grad else None)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return record_op(out, [a], lambda g: a.accumulate_grad(g * out.data) if a.requires_grad else None)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return record_op(out, [a], lambda g: a.accumulate_grad(g / a.data) if a.requires_grad else None)


def tensor_sum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype))

    return record_op(out, [a], bwd)


def tensor_mean(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean())
    scale = 1.0 / a.size

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g * scale, a.shape).astype(a.dtype))

    return record_op(out, [a], bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape[1]} vs {b.shape[0]}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return record_op(out, [a, b], bwd)


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose2d: expects 2-d input, got {a.shape}")
    out = Tensor(a.data.T.copy())
    return record_op(out, [a], lambda g: a.accumulate_grad(g.T) if a.requires_grad else None)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record_op(
        out, [a], lambda g: a.accumulate_grad(g.reshape(a.shape)) if a.requires_grad else None
    )


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                p.accumulate_grad(g[tuple(index)])

    return record_op(out, list(parts), bwd)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    # subgradient at exactly 0 is taken as 0
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return record_op(out, [a], bwd)


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return record_op(out, [a], bwd)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weight plus per-channel bias."""
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d: weight must be OIHW, got {weight.shape}")
    n, ci, h, w = x.shape
    co, wi, kh, kw = weight.shape
    if wi != ci:
        raise ValueError(f"conv2d: input has {ci} channels but weight expects {wi}")
    if bias.shape != (co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({co},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    out = Tensor(kernels.conv2d_forward(x.data, weight.data, bias.data, stride, padding))

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x.accumulate_grad(kernels.conv2d_backward_input(g, weight.data, stride, padding, h, w))
        if weight.requires_grad:
            weight.accumulate_grad(
                kernels.conv2d_backward_weight(x.data, g, kh, kw, stride, padding)
            )
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return record_op(out, [x, weight, bias], bwd)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-group normalization followed by channelwise affine."""
    if x.ndim != 4:
        raise ValueError(f"group_norm: input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ValueError(f"group_norm: channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv_std).reshape(n, c, h, w)
    out = Tensor(xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None])

    def bwd(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            m1 = dxhat.mean(axis=2, keepdims=True)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True)
            dx = inv_std * (dxhat - m1 - xh * m2)
            x.accumulate_grad(dx.reshape(n, c, h, w))

    return record_op(out, [x, gamma, beta], bwd)


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"avg_pool2d: input must be NCHW, got {x.shape}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ValueError(f"avg_pool2d: kernel {kernel} exceeds spatial dims {h}x{w}")
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    acc = np.zeros((n, c, out_h, out_w), dtype=x.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            acc += x.data[:, :, ky : ky + out_h * stride : stride, kx : kx + out_w * stride : stride]
    inv = 1.0 / (kernel * kernel)
    out = Tensor(acc * inv)

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros((n, c, h, w), dtype=x.dtype)
            gs = g * inv
            for ky in range(kernel):
                for kx in range(kernel):
                    dx[:, :, ky : ky + out_h * stride : stride, kx : kx + out_w * stride : stride] += gs
            x.accumulate_grad(dx)

    return record_op(out, [x], bwd)


def bilinear_sample(x: Tensor, coords: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Sample NCHW input at absolute pixel coordinates.

    ``coords`` is an N x 2 x Ho x Wo array; channel 0 holds x (column) and
    channel 1 holds y (row) positions. Out-of-range coordinates are clamped to
    the border for sampling and flagged False in the returned N x Ho x Wo
    validity mask. Differentiable w.r.t. ``x`` only; coordinates are constants.
    """
    if x.ndim != 4:
        raise ValueError(f"bilinear_sample: input must be NCHW, got {x.shape}")
    coords = coords.data if isinstance(coords, Tensor) else np.asarray(coords)
    if coords.ndim != 4 or coords.shape[1] != 2 or coords.shape[0] != x.shape[0]:
        raise ValueError(
            f"bilinear_sample: coords must be Nx2xHxW matching batch, got {coords.shape}"
        )
    n, c, h, w = x.shape
    xs = np.ascontiguousarray(coords[:, 0], dtype=x.dtype)
    ys = np.ascontiguousarray(coords[:, 1], dtype=x.dtype)
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    out = Tensor(kernels.bilinear_gather(x.data, xs, ys))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(kernels.bilinear_scatter(np.ascontiguousarray(g), xs, ys, h, w))

    return record_op(out, [x], bwd), valid


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit norm; norms below eps divide by eps."""
    norm = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    out = Tensor(y)
    clamped = norm < eps

    def bwd(g):
        if x.requires_grad:
            proj = (g * y).sum(axis=axis, keepdims=True)
            dx = np.where(clamped, g / eps, (g - y * proj) / denom)
            x.accumulate_grad(dx.astype(x.dtype))

    return record_op(out, [x], bwd)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool NCHW -> NC."""
    if x.ndim != 4:
        raise ValueError(f"spatial_mean: input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    scale = 1.0 / (h * w)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g[:, :, None, None] * scale, x.shape).astype(x.dtype))

    return record_op(out, [x], bwd)


def masked_logsumexp(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log-sum-exp of a 2-d tensor restricted to ``mask`` columns.

    Every row must keep at least one masked-in entry.
    """
    if x.ndim != 2:
        raise ValueError(f"masked_logsumexp: expects 2-d input, got {x.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError(f"masked_logsumexp: mask shape {mask.shape} != {x.shape}")
    if not mask.any(axis=1).all():
        raise ValueError("masked_logsumexp: some row has no valid entries")
    neg_inf = np.array(-np.inf, dtype=x.dtype)
    masked = np.where(mask, x.data, neg_inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(masked - m), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out_data = (m + np.log(s)).reshape(-1)
    out = Tensor(out_data)
    soft = e / s

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad((g[:, None] * soft).astype(x.dtype))

    return record_op(out, [x], bwd)
