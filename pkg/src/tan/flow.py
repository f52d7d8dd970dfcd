"""Lucas-Kanade contour tracking and label-mask reconstruction."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
from scipy import ndimage

from .data import DegenerateError, TanError, mask_from_contour, polygon_area
from .polyline import as_closed, directed_max


class PropagationError(TanError):
    pass


class Status(str, Enum):
    OK = "ok"
    LOW_CONFIDENCE = "low_confidence"
    OUT_OF_BOUNDS = "out_of_bounds"


@dataclass(frozen=True)
class FlowConfig:
    window: int = 11
    pyramid_levels: int = 3
    downscale: int = 2
    max_iters: int = 10
    epsilon: float = 0.01
    min_eigen: float = 1e-4

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.downscale != 2:
            raise ValueError("only downscale 2 is supported")

    @classmethod
    def from_dict(cls, d: dict) -> "FlowConfig":
        keys = {"window": "window", "levels": "pyramid_levels", "max_iters": "max_iters",
                "epsilon": "epsilon", "min_eigen": "min_eigen"}
        return cls(**{keys[k]: v for k, v in d.items() if k in keys})


@dataclass(frozen=True)
class TrackedPoint:
    position: Tuple[float, float]
    velocity: Tuple[float, float]
    status: Status


# ------------------------------------------------------------ resampling


def resample_contour(points, n: int = 20) -> np.ndarray:
    """``n`` points at uniform arc length, starting at the vertex with minimal y
    (ties: minimal x), positively oriented."""
    p = as_closed(points)
    if polygon_area(p) < 0:
        p = p[::-1]
    order = np.lexsort((p[:, 0], p[:, 1]))
    p = np.roll(p, -int(order[0]), axis=0)
    closed = np.vstack([p, p[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    total = seg.sum()
    if total <= 0:
        raise DegenerateError("contour has zero perimeter")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(n) * (total / n)
    x = np.interp(s, cum, closed[:, 0])
    y = np.interp(s, cum, closed[:, 1])
    return np.column_stack([x, y])


# ------------------------------------------------------------ LK tracking


def build_pyramid(img: np.ndarray, levels: int):
    pyr = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")[::2, ::2])
    return pyr


def _clamped_bilinear(img, xs, ys):
    h, w = img.shape
    xs = np.minimum(np.maximum(xs, 0.0), w - 1.0)
    ys = np.minimum(np.maximum(ys, 0.0), h - 1.0)
    x0 = np.minimum(xs.astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(ys.astype(np.intp), max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    flat = img.ravel()
    i00 = y0 * w + x0
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    top = flat[i00] + fx * (flat[i00 + dx] - flat[i00])
    bot = flat[i00 + dy] + fx * (flat[i00 + dy + dx] - flat[i00 + dy])
    return top + fy * (bot - top)


class _Level:
    __slots__ = ("prev", "cur", "gx", "gy")

    def __init__(self, prev, cur):
        self.prev = prev
        self.cur = cur
        # central differences on the previous frame
        self.gy, self.gx = np.gradient(prev)


def lk_track_points(prev, cur, pts, cfg: FlowConfig = FlowConfig(), pyramids=None):
    """Track many points at once; returns (velocities (N,2), statuses list)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h, w = np.shape(prev)
    if pyramids is None:
        pyramids = (build_pyramid(prev, cfg.pyramid_levels), build_pyramid(cur, cfg.pyramid_levels))
    levels = [_Level(p, c) for p, c in zip(*pyramids)]
    n = len(pts)
    r = cfg.window // 2
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    ox = ox.ravel().astype(float)
    oy = oy.ravel().astype(float)
    area = float(ox.size)

    inb = np.isfinite(pts).all(axis=1) & (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)
    guess = np.zeros((n, 2))
    valid_finest = np.zeros(n, dtype=bool)
    for lvl in range(len(levels) - 1, -1, -1):
        L = levels[lvl]
        scale = float(2 ** lvl)
        pl = pts / scale
        wx = pl[:, :1] + ox
        wy = pl[:, 1:] + oy
        I = _clamped_bilinear(L.prev, wx, wy)
        Ix = _clamped_bilinear(L.gx, wx, wy)
        Iy = _clamped_bilinear(L.gy, wx, wy)
        gxx = (Ix * Ix).sum(1)
        gxy = (Ix * Iy).sum(1)
        gyy = (Iy * Iy).sum(1)
        det = gxx * gyy - gxy * gxy
        tr = gxx + gyy
        lmin = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))) / area
        ok = inb & (lmin >= cfg.min_eigen) & (det > 0)
        v = np.zeros((n, 2))
        active = ok.copy()
        safe_det = np.where(ok, det, 1.0)
        for _ in range(cfg.max_iters):
            if not active.any():
                break
            J = _clamped_bilinear(L.cur, wx + (guess[:, :1] + v[:, :1]), wy + (guess[:, 1:] + v[:, 1:]))
            It = J - I
            bx = -(Ix * It).sum(1)
            by = -(Iy * It).sum(1)
            dvx = (gyy * bx - gxy * by) / safe_det
            dvy = (gxx * by - gxy * bx) / safe_det
            dvx = np.where(active, dvx, 0.0)
            dvy = np.where(active, dvy, 0.0)
            v[:, 0] += dvx
            v[:, 1] += dvy
            active &= np.hypot(dvx, dvy) >= cfg.epsilon
        flow = guess + v
        if lvl == 0:
            guess = flow
            valid_finest = ok
        else:
            guess = 2.0 * flow
    status = []
    for i in range(n):
        end = pts[i] + guess[i]
        if not inb[i] or not np.all(np.isfinite(end)) or not (-0.5 <= end[0] < w - 0.5 and -0.5 <= end[1] < h - 0.5):
            status.append(Status.OUT_OF_BOUNDS)
        elif not valid_finest[i]:
            status.append(Status.LOW_CONFIDENCE)
        else:
            status.append(Status.OK)
    guess[~inb] = 0.0
    return guess, status


def lk_track_point(prev, cur, p, cfg: FlowConfig = FlowConfig()) -> TrackedPoint:
    v, st = lk_track_points(prev, cur, np.asarray(p, dtype=float)[None], cfg)
    return TrackedPoint(tuple(float(c) for c in p), (float(v[0, 0]), float(v[0, 1])), st[0])


@dataclass
class PropagatedContour:
    points: np.ndarray
    status: list
    filled: np.ndarray  # bool per point, True where velocity was interpolated


def _fill_circular(vel: np.ndarray, good: np.ndarray) -> np.ndarray:
    n = len(vel)
    gi = np.flatnonzero(good)
    out = vel.copy()
    # unwrap good indices over three periods for circular interpolation
    xp = np.concatenate([gi - n, gi, gi + n])
    bad = np.flatnonzero(~good)
    for d in range(2):
        fp = np.tile(vel[gi, d], 3)
        out[bad, d] = np.interp(bad, xp, fp)
    return out


def propagate_contour(prev, cur, pts, cfg: FlowConfig = FlowConfig(), pyramids=None) -> PropagatedContour:
    """Move contour points by their LK velocity; failed points take the velocity
    interpolated from their nearest successfully tracked neighbours."""
    pts = np.asarray(pts, dtype=float)
    vel, status = lk_track_points(prev, cur, pts, cfg, pyramids)
    good = np.array([s is Status.OK for s in status])
    if not good.any():
        raise PropagationError("no contour point could be tracked")
    filled = ~good
    if filled.any():
        vel = _fill_circular(vel, good)
    return PropagatedContour(pts + vel, status, filled)


# ------------------------------------------------------- mask reconstruction


def catmull_rom_closed(pts, subdivisions: int = 16) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    p0 = np.roll(p, 1, axis=0)
    p1 = p
    p2 = np.roll(p, -1, axis=0)
    p3 = np.roll(p, -2, axis=0)
    t = (np.arange(subdivisions) / subdivisions)[None, :, None]
    c = 0.5 * (2 * p1[:, None] + (p2 - p0)[:, None] * t
               + (2 * p0 - 5 * p1 + 4 * p2 - p3)[:, None] * t ** 2
               + (-p0 + 3 * p1 - 3 * p2 + p3)[:, None] * t ** 3)
    return c.reshape(-1, 2)


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _on_seg(a, b, c):
    return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))


def is_self_intersecting(poly) -> bool:
    """True if any two non-adjacent edges of the closed polyline touch."""
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 4:
        return polygon_area(p) == 0.0
    a = p
    b = np.roll(p, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    sel = ~((i == 0) & (j == n - 1))
    i, j = i[sel], j[sel]
    A, B, C, D = a[i], b[i], a[j], b[j]
    d1 = _orient(C, D, A)
    d2 = _orient(C, D, B)
    d3 = _orient(A, B, C)
    d4 = _orient(A, B, D)
    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) & (((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0)))
    touch = ((d1 == 0) & _on_seg(C, D, A)) | ((d2 == 0) & _on_seg(C, D, B)) \
        | ((d3 == 0) & _on_seg(A, B, C)) | ((d4 == 0) & _on_seg(A, B, D))
    return bool(np.any(proper | touch))


@dataclass
class Reconstruction:
    mask: np.ndarray
    contour: np.ndarray
    fallback: bool


def reconstruct_mask(pts, w: int, h: int, subdivisions: int = 16) -> Reconstruction:
    """Smooth the tracked points with a closed Catmull-Rom spline and rasterize.
    Falls back to the straight polygon if the spline crosses itself."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 4:
        raise DegenerateError("need at least 4 points to reconstruct a mask")
    if subdivisions < 8:
        raise ValueError("need at least 8 subdivisions per segment")
    spline = catmull_rom_closed(pts, subdivisions)
    if is_self_intersecting(spline):
        return Reconstruction(mask_from_contour(pts, w, h), pts, True)
    return Reconstruction(mask_from_contour(spline, w, h), spline, False)


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two closed polylines (pixels)."""
    return max(directed_max(a, b), directed_max(b, a))
