"""Separable resampling kernels shared across the pipeline.

Two kernels only, both pinned so golden tests are stable across
platforms: area averaging for downscale and bilinear (half-pixel
centers, clamp-to-edge) for upscale. All arithmetic is float64; callers
quantize to uint8 themselves when needed.
"""

from __future__ import annotations

import numpy as np


def _area_weights(src: int, dst: int) -> np.ndarray:
    """dst x src row matrix; row i holds the overlap fractions of source
    cells with destination interval [i*src/dst, (i+1)*src/dst)."""
    w = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), src)
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                w[i, j] = overlap / scale
    return w


def resize_area(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter (area-average) resize; exact content integral per output
    cell, so constants are preserved up to rounding."""
    arr = np.asarray(src, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, _ = arr.shape
    wr = _area_weights(h, out_h)
    wc = _area_weights(w, out_w)
    out = np.einsum("ij,jkc->ikc", wr, arr)
    out = np.einsum("kl,ilc->ikc", wc, out)
    return out[:, :, 0] if squeeze else out


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel alignment and edge clamping."""
    arr = np.asarray(src, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, c = arr.shape

    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = np.clip(sy - y0, 0.0, 1.0)[:, None, None]
    tx = np.clip(sx - x0, 0.0, 1.0)[None, :, None]

    top = arr[y0][:, x0] * (1 - tx) + arr[y0][:, x1] * tx
    bot = arr[y1][:, x0] * (1 - tx) + arr[y1][:, x1] * tx
    out = top * (1 - ty) + bot * ty
    return out[:, :, 0] if squeeze else out


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    """Round half-to-even and clip into the 8-bit range."""
    return np.clip(np.round(arr), 0, 255).astype(np.uint8)
