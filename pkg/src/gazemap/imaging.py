"""Bilinear sampling and resizing on 2-D grids (half-pixel-center convention)."""

from __future__ import annotations

import numpy as np


def bilinear_sample(img: np.ndarray, x, y, fill: float = 0.0) -> np.ndarray:
    """Sample ``img`` at continuous pixel coordinates (pixel centers at k + 0.5).

    Taps falling outside the grid read ``fill``.
    """
    h, w = img.shape
    u = np.asarray(x, dtype=float) - 0.5
    v = np.asarray(y, dtype=float) - 0.5
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    fu = u - u0
    fv = v - v0
    out = np.zeros(np.broadcast(u, v).shape)
    for dv, wv in ((0, 1.0 - fv), (1, fv)):
        for du, wu in ((0, 1.0 - fu), (1, fu)):
            uu, vv = u0 + du, v0 + dv
            ok = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
            val = np.where(ok, img[np.clip(vv, 0, h - 1), np.clip(uu, 0, w - 1)], fill)
            out += wu * wv * val
    return out


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear interpolation matrix with edge clamping."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    W = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(W, (rows, i0), 1.0 - f)
    np.add.at(W, (rows, i1), f)
    return W


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of the last two axes; identity when sizes match."""
    a = np.asarray(img, dtype=float)
    h, w = a.shape[-2:]
    if (h, w) == (out_h, out_w):
        return a.copy()
    Wy = _axis_weights(h, out_h)
    Wx = _axis_weights(w, out_w)
    return (Wy @ a) @ Wx.T
