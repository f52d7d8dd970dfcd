"""Output-driven affine resampling of frames (bilinear) and masks (nearest)."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import CANVAS, AffineTransform


@dataclass(frozen=True)
class WarpSpec:
    transform: AffineTransform  # source -> output coordinates
    out_dims: Tuple[int, int] = (CANVAS, CANVAS)  # (width, height)
    fill: float = 0.0

    def __post_init__(self):
        if self.out_dims[0] <= 0 or self.out_dims[1] <= 0:
            raise ValueError("out_dims must be positive")
        if abs(self.transform.det) <= 1e-12:
            raise ValueError("warp transform is not invertible")


def _source_coords(inv: np.ndarray, rows: np.ndarray, width: int):
    u = np.arange(width, dtype=float)[None, :]
    v = rows.astype(float)[:, None]
    xs = inv[0, 0] * u + inv[0, 1] * v + inv[0, 2]
    ys = inv[1, 0] * u + inv[1, 1] * v + inv[1, 2]
    return xs, ys


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Sample ``img`` at continuous (x, y); points outside the image extent
    ``[-0.5, n-0.5)`` get ``fill``, neighbours past the last center are clamped."""
    h, w = img.shape
    inside = (xs >= -0.5) & (xs < w - 0.5) & (ys >= -0.5) & (ys < h - 0.5)
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.where(inside, out, fill)


def nearest_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill=0) -> np.ndarray:
    h, w = img.shape
    xi = np.floor(xs + 0.5)
    yi = np.floor(ys + 0.5)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    xi = np.clip(xi, 0, w - 1).astype(np.intp)
    yi = np.clip(yi, 0, h - 1).astype(np.intp)
    return np.where(inside, img[yi, xi], fill)


def _warp(img, spec: WarpSpec, sampler, dtype, workers: int):
    inv = spec.transform.inverse().m
    w, h = spec.out_dims
    out = np.empty((h, w), dtype=dtype)

    def rows(lo, hi):
        r = np.arange(lo, hi)
        xs, ys = _source_coords(inv, r, w)
        out[lo:hi] = sampler(img, xs, ys, spec.fill)

    if workers <= 1 or h < 2 * workers:
        rows(0, h)
    else:
        bounds = np.linspace(0, h, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(lambda b: rows(*b), zip(bounds[:-1], bounds[1:])))
    return out


def warp_image(img: np.ndarray, spec: WarpSpec, workers: int = 1) -> np.ndarray:
    """Output pixel (u, v) = bilinear sample of ``img`` at T^-1(u, v)."""
    return _warp(np.asarray(img, dtype=np.float64), spec, bilinear_sample, np.float64, workers)


def warp_mask(mask: np.ndarray, spec: WarpSpec, workers: int = 1) -> np.ndarray:
    return _warp(np.asarray(mask, dtype=np.uint8), spec, nearest_sample, np.uint8, workers)
