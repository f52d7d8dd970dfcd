"""Closed-polyline distance primitives shared by ASD and Hausdorff."""

from __future__ import annotations

import numpy as np

from .data import DegenerateError

SAMPLE_SPACING = 0.5
_CHUNK = 1 << 20


def as_closed(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
        raise DegenerateError("polyline needs at least two 2D points")
    if not np.all(np.isfinite(p)):
        raise DegenerateError("polyline has non-finite points")
    seg = np.roll(p, -1, axis=0) - p
    if not np.any(np.hypot(seg[:, 0], seg[:, 1]) > 0):
        raise DegenerateError("polyline has zero length")
    return p


def segments(points: np.ndarray):
    return points, np.roll(points, -1, axis=0)


def point_segment_distance(q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point in ``q`` to the nearest of the segments ``a[k]-b[k]``."""
    q = np.asarray(q, dtype=float)
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    safe = np.where(ll > 0, ll, 1.0)
    out = np.empty(len(q))
    step = max(1, _CHUNK // max(len(a), 1))
    for lo in range(0, len(q), step):
        qq = q[lo:lo + step, None, :]
        aq = qq - a[None]
        t = np.clip(np.einsum("pkj,kj->pk", aq, ab) / safe, 0.0, 1.0)
        t = np.where(ll > 0, t, 0.0)
        dx = aq[..., 0] - t * ab[:, 0]
        dy = aq[..., 1] - t * ab[:, 1]
        out[lo:lo + step] = np.sqrt((dx * dx + dy * dy).min(axis=1))
    return out


def piece_midpoints(points: np.ndarray, spacing: float = SAMPLE_SPACING):
    """Split every edge into equal pieces no longer than ``spacing``; return the
    piece midpoints and their lengths."""
    a, b = segments(points)
    lens = np.hypot(*(b - a).T)
    k = np.maximum(np.ceil(lens / spacing).astype(int), 1)
    idx = np.repeat(np.arange(len(a)), k)
    within = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
    t = (within + 0.5) / k[idx]
    mids = a[idx] + t[:, None] * (b - a)[idx]
    w = (lens / k)[idx]
    return mids, w


def edge_samples(points: np.ndarray, spacing: float = SAMPLE_SPACING) -> np.ndarray:
    """Vertices plus evenly spaced interior points on every edge, in order."""
    a, b = segments(points)
    lens = np.hypot(*(b - a).T)
    k = np.maximum(np.ceil(lens / spacing).astype(int), 1)
    idx = np.repeat(np.arange(len(a)), k)
    within = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
    t = within / k[idx]
    return a[idx] + t[:, None] * (b - a)[idx]


def _convex_bound(p0, p1, a, b) -> np.ndarray:
    """min_k max(f_k(p0), f_k(p1)): distance to a fixed segment is convex along
    a straight piece, so this bounds the distance anywhere on the piece."""
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    safe = np.where(ll > 0, ll, 1.0)
    out = np.empty(len(p0))
    step = max(1, _CHUNK // max(2 * len(a), 1))

    def dist(q):
        aq = q[:, None, :] - a[None]
        t = np.clip(np.einsum("pkj,kj->pk", aq, ab) / safe, 0.0, 1.0)
        t = np.where(ll > 0, t, 0.0)
        dx = aq[..., 0] - t * ab[:, 0]
        dy = aq[..., 1] - t * ab[:, 1]
        return dx * dx + dy * dy

    for lo in range(0, len(p0), step):
        m = np.maximum(dist(p0[lo:lo + step]), dist(p1[lo:lo + step]))
        out[lo:lo + step] = np.sqrt(m.min(axis=1))
    return out


def directed_mean(a_pts, b_pts, spacing: float = SAMPLE_SPACING) -> float:
    """Arc-length mean over ``a`` of the distance to polyline ``b``."""
    a = as_closed(a_pts)
    b = as_closed(b_pts)
    mids, w = piece_midpoints(a, spacing)
    d = point_segment_distance(mids, *segments(b))
    return float(np.dot(d, w) / w.sum())


def directed_max(a_pts, b_pts, spacing: float = SAMPLE_SPACING, tol: float = 1e-6) -> float:
    """Sup over the continuous polyline ``a`` of the distance to ``b``.

    Samples at ``spacing``, then subdivides only the pieces whose upper bound
    (1-Lipschitz, and per-segment convexity) could still beat the best sample.
    """
    a = as_closed(a_pts)
    b = as_closed(b_pts)
    sa, sb = segments(b)
    s = edge_samples(a, spacing)
    d = point_segment_distance(s, sa, sb)
    best = float(d.max())
    p0, p1 = s, np.roll(s, -1, axis=0)
    d0, d1 = d, np.roll(d, -1)
    for _ in range(60):
        ln = np.hypot(*(p1 - p0).T)
        keep = 0.5 * (d0 + d1 + ln) > best + tol
        if np.any(keep):
            idx = np.flatnonzero(keep)
            keep[idx] = _convex_bound(p0[idx], p1[idx], sa, sb) > best + tol
        if not np.any(keep):
            break
        p0, p1, d0, d1 = p0[keep], p1[keep], d0[keep], d1[keep]
        n = 8
        t = np.arange(1, n) / n
        inner = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
        di = point_segment_distance(inner.reshape(-1, 2), sa, sb).reshape(len(p0), n - 1)
        best = max(best, float(di.max()))
        pts = np.concatenate([p0[:, None], inner, p1[:, None]], axis=1)
        ds = np.concatenate([d0[:, None], di, d1[:, None]], axis=1)
        p0 = pts[:, :-1].reshape(-1, 2)
        p1 = pts[:, 1:].reshape(-1, 2)
        d0 = ds[:, :-1].ravel()
        d1 = ds[:, 1:].ravel()
    return best


def perimeter(points) -> float:
    a, b = segments(np.asarray(points, dtype=float))
    return float(np.hypot(*(b - a).T).sum())
