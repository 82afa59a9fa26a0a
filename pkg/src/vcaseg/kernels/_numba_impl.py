"""Numba-jitted hot kernels.

Same signatures and arithmetic as ``_numpy_impl``; fastmath stays off so the
two backends agree to roundoff and results are reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _conv2d_forward_padded(xp, w, b, stride, out_h, out_w):
    n, ci, _, _ = xp.shape
    co, _, kh, kw = w.shape
    out = np.empty((n, co, out_h, out_w), dtype=xp.dtype)
    acc = np.empty(out_w, dtype=xp.dtype)
    for ni in range(n):
        for oc in range(co):
            for oh in range(out_h):
                for i in range(out_w):
                    acc[i] = b[oc]
                ih0 = oh * stride
                for ic in range(ci):
                    for ky in range(kh):
                        xrow = xp[ni, ic, ih0 + ky]
                        for kx in range(kw):
                            wv = w[oc, ic, ky, kx]
                            for ow in range(out_w):
                                acc[ow] += wv * xrow[ow * stride + kx]
                out[ni, oc, oh, :] = acc
    return out


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, ci, h, wid = x.shape
    _, _, kh, kw = w.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wid + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    return _conv2d_forward_padded(np.ascontiguousarray(xp), w, b, stride, out_h, out_w)


@njit(cache=True)
def _conv2d_backward_weight_padded(xp, grad, kh, kw, stride):
    n, ci, _, _ = xp.shape
    co, out_h, out_w = grad.shape[1], grad.shape[2], grad.shape[3]
    dw = np.zeros((co, ci, kh, kw), dtype=grad.dtype)
    for oc in range(co):
        for ic in range(ci):
            for ky in range(kh):
                for kx in range(kw):
                    acc = 0.0
                    for ni in range(n):
                        for oh in range(out_h):
                            xrow = xp[ni, ic, oh * stride + ky]
                            grow = grad[ni, oc, oh]
                            for ow in range(out_w):
                                acc += grow[ow] * xrow[ow * stride + kx]
                    dw[oc, ic, ky, kx] = acc
    return dw


def conv2d_backward_weight(
    x: np.ndarray, grad: np.ndarray, kh: int, kw: int, stride: int, padding: int
) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    return _conv2d_backward_weight_padded(
        np.ascontiguousarray(xp), np.ascontiguousarray(grad), kh, kw, stride
    )


@njit(cache=True)
def _conv2d_backward_input_padded(grad, w, stride, hp, wp):
    n, co, out_h, out_w = grad.shape
    _, ci, kh, kw = w.shape
    dxp = np.zeros((n, ci, hp, wp), dtype=grad.dtype)
    for ni in range(n):
        for oc in range(co):
            for oh in range(out_h):
                grow = grad[ni, oc, oh]
                ih0 = oh * stride
                for ic in range(ci):
                    for ky in range(kh):
                        drow = dxp[ni, ic, ih0 + ky]
                        for kx in range(kw):
                            wv = w[oc, ic, ky, kx]
                            for ow in range(out_w):
                                drow[ow * stride + kx] += wv * grow[ow]
    return dxp


def conv2d_backward_input(
    grad: np.ndarray, w: np.ndarray, stride: int, padding: int, h: int, wid: int
) -> np.ndarray:
    dxp = _conv2d_backward_input_padded(
        np.ascontiguousarray(grad), w, stride, h + 2 * padding, wid + 2 * padding
    )
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])
    return dxp


@njit(cache=True)
def _bilinear_gather(src, xs, ys):
    n, c, h, wid = src.shape
    oh, ow = xs.shape[1], xs.shape[2]
    out = np.empty((n, c, oh, ow), dtype=src.dtype)
    for ni in range(n):
        for j in range(oh):
            for i in range(ow):
                x = min(max(xs[ni, j, i], 0.0), wid - 1.0)
                y = min(max(ys[ni, j, i], 0.0), h - 1.0)
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                x1 = min(x0 + 1, wid - 1)
                y1 = min(y0 + 1, h - 1)
                fx = x - x0
                fy = y - y0
                w00 = (1.0 - fy) * (1.0 - fx)
                w01 = (1.0 - fy) * fx
                w10 = fy * (1.0 - fx)
                w11 = fy * fx
                for ci in range(c):
                    plane = src[ni, ci]
                    out[ni, ci, j, i] = (
                        plane[y0, x0] * w00
                        + plane[y0, x1] * w01
                        + plane[y1, x0] * w10
                        + plane[y1, x1] * w11
                    )
    return out


def bilinear_gather(src: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return _bilinear_gather(
        np.ascontiguousarray(src), np.ascontiguousarray(xs), np.ascontiguousarray(ys)
    )


@njit(cache=True)
def _bilinear_scatter(grad, xs, ys, h, wid):
    n, c, oh, ow = grad.shape
    dsrc = np.zeros((n, c, h, wid), dtype=grad.dtype)
    for ni in range(n):
        for j in range(oh):
            for i in range(ow):
                x = min(max(xs[ni, j, i], 0.0), wid - 1.0)
                y = min(max(ys[ni, j, i], 0.0), h - 1.0)
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                x1 = min(x0 + 1, wid - 1)
                y1 = min(y0 + 1, h - 1)
                fx = x - x0
                fy = y - y0
                w00 = (1.0 - fy) * (1.0 - fx)
                w01 = (1.0 - fy) * fx
                w10 = fy * (1.0 - fx)
                w11 = fy * fx
                for ci in range(c):
                    g = grad[ni, ci, j, i]
                    dsrc[ni, ci, y0, x0] += g * w00
                    dsrc[ni, ci, y0, x1] += g * w01
                    dsrc[ni, ci, y1, x0] += g * w10
                    dsrc[ni, ci, y1, x1] += g * w11
    return dsrc


def bilinear_scatter(grad: np.ndarray, xs: np.ndarray, ys: np.ndarray, h: int, wid: int) -> np.ndarray:
    return _bilinear_scatter(
        np.ascontiguousarray(grad), np.ascontiguousarray(xs), np.ascontiguousarray(ys), h, wid
    )
