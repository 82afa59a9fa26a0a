"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba backend; also the fallback when numba is
unavailable or ``VCAS_KERNELS=numpy`` is set.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _windows(xp: np.ndarray, out_h: int, out_w: int, kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        (n, c, out_h, out_w, kh, kw),
        (sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, ci, h, wid = x.shape
    co, _, kh, kw = w.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wid + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, out_h, out_w, kh, kw, stride)
    out = np.einsum("nihwpq,oipq->nohw", win, w, optimize=True)
    out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward_weight(
    x: np.ndarray, grad: np.ndarray, kh: int, kw: int, stride: int, padding: int
) -> np.ndarray:
    _, _, out_h, out_w = grad.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, out_h, out_w, kh, kw, stride)
    return np.ascontiguousarray(np.einsum("nihwpq,nohw->oipq", win, grad, optimize=True))


def conv2d_backward_input(
    grad: np.ndarray, w: np.ndarray, stride: int, padding: int, h: int, wid: int
) -> np.ndarray:
    # Dilate the output grad by the stride, pad by kernel-1, and correlate
    # with the spatially flipped kernel; then crop away the forward padding.
    n, co, out_h, out_w = grad.shape
    _, ci, kh, kw = w.shape
    hd = (out_h - 1) * stride + 1
    wd = (out_w - 1) * stride + 1
    gd = np.zeros((n, co, hd + 2 * (kh - 1), wd + 2 * (kw - 1)), dtype=grad.dtype)
    gd[:, :, kh - 1 : kh - 1 + hd : stride, kw - 1 : kw - 1 + wd : stride] = grad
    win = _windows(gd, hd + kh - 1, wd + kw - 1, kh, kw, 1)
    w_flip = w[:, :, ::-1, ::-1]
    dx_full = np.einsum("nohwpq,oipq->nihw", win, w_flip, optimize=True)
    dx = np.zeros((n, ci, h, wid), dtype=grad.dtype)
    avail_h = min(h, dx_full.shape[2] - padding)
    avail_w = min(wid, dx_full.shape[3] - padding)
    dx[:, :, :avail_h, :avail_w] = dx_full[:, :, padding : padding + avail_h, padding : padding + avail_w]
    return dx


def _corner_indices(xs: np.ndarray, ys: np.ndarray, h: int, wid: int):
    xc = np.clip(xs, 0.0, wid - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, wid - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0).astype(xs.dtype)
    fy = (yc - y0).astype(ys.dtype)
    return x0, x1, y0, y1, fx, fy


def bilinear_gather(src: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    n, c, h, wid = src.shape
    x0, x1, y0, y1, fx, fy = _corner_indices(xs, ys, h, wid)
    flat = src.reshape(n, c, h * wid)

    def take(yi, xi):
        idx = (yi * wid + xi).reshape(n, 1, -1)
        return np.take_along_axis(flat, np.broadcast_to(idx, (n, c, idx.shape[2])), axis=2)

    oh, ow = xs.shape[1], xs.shape[2]
    v00 = take(y0, x0)
    v01 = take(y0, x1)
    v10 = take(y1, x0)
    v11 = take(y1, x1)
    fx = fx.reshape(n, 1, -1)
    fy = fy.reshape(n, 1, -1)
    out = (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )
    return np.ascontiguousarray(out.reshape(n, c, oh, ow))


def bilinear_scatter(grad: np.ndarray, xs: np.ndarray, ys: np.ndarray, h: int, wid: int) -> np.ndarray:
    n, c, oh, ow = grad.shape
    x0, x1, y0, y1, fx, fy = _corner_indices(xs, ys, h, wid)
    dsrc = np.zeros((n, c, h * wid), dtype=grad.dtype)
    g = grad.reshape(n, c, -1)
    fx = fx.reshape(n, 1, -1)
    fy = fy.reshape(n, 1, -1)
    ni = np.arange(n)[:, None, None]
    ci = np.arange(c)[None, :, None]
    for yi, xi, wgt in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x1, (1 - fy) * fx),
        (y1, x0, fy * (1 - fx)),
        (y1, x1, fy * fx),
    ):
        idx = (yi * wid + xi).reshape(n, 1, -1)
        np.add.at(dsrc, (ni, ci, idx), g * wgt)
    return dsrc.reshape(n, c, h, wid)
