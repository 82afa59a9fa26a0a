"""Plain-numpy image resampling helpers (no gradients).

Half-pixel-center convention throughout: output pixel i samples input
coordinate (i + 0.5) * in/out - 0.5.
"""

from __future__ import annotations

import numpy as np


def _nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(np.round(src), 0, n_in - 1).astype(np.int64)


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of the trailing two axes."""
    if arr.shape[-2:] == (out_h, out_w):
        return arr.copy()
    ys = _nearest_indices(out_h, arr.shape[-2])
    xs = _nearest_indices(out_w, arr.shape[-1])
    return np.ascontiguousarray(arr[..., ys[:, None], xs[None, :]])


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes (border-clamped)."""
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(arr.dtype)
    fx = (sx - x0).astype(arr.dtype)
    top = arr[..., y0[:, None], x0[None, :]] * (1 - fx)[None, :] + arr[..., y0[:, None], x1[None, :]] * fx[None, :]
    bot = arr[..., y1[:, None], x0[None, :]] * (1 - fx)[None, :] + arr[..., y1[:, None], x1[None, :]] * fx[None, :]
    return np.ascontiguousarray(top * (1 - fy)[:, None] + bot * fy[:, None])


def resize_flow(flow: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear-resize a 2xHxW (or Nx2xHxW) flow field, rescaling displacements
    by the per-axis size ratio."""
    h, w = flow.shape[-2:]
    out = resize_bilinear(flow, out_h, out_w)
    out[..., 0, :, :] *= out_w / w
    out[..., 1, :, :] *= out_h / h
    return out
