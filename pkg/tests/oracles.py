"""Independent brute-force references used by several test modules."""

import numpy as np


def dense(poly, spacing=0.005):
    """Points every ``spacing`` px along the closed polyline (vertices included)."""
    p = np.asarray(poly, float)
    q = np.roll(p, -1, axis=0)
    out = []
    for a, b in zip(p, q):
        n = max(1, int(np.ceil(np.hypot(*(b - a)) / spacing)))
        t = np.arange(n)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


def _to_polyline(q, poly):
    """Exact distance from each point in q to the closed polyline, brute force."""
    p = np.asarray(poly, float)
    a, b = p, np.roll(p, -1, axis=0)
    ab = b - a
    t = ((q[:, None, :] - a[None]) * ab[None]).sum(-1) / (ab * ab).sum(-1)[None]
    t = np.clip(t, 0.0, 1.0)
    near = a[None] + t[..., None] * ab[None]
    return np.sqrt(((q[:, None, :] - near) ** 2).sum(-1)).min(axis=1)


def dense_hausdorff(a, b, spacing=0.005):
    return max(_to_polyline(dense(a, spacing), b).max(), _to_polyline(dense(b, spacing), a).max())


def dense_asd(a, b, spacing=0.005):
    return 0.5 * (_to_polyline(dense(a, spacing), b).mean() + _to_polyline(dense(b, spacing), a).mean())


def count_dice(a, b):
    inter = sa = sb = 0
    for x, y in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        inter += bool(x) and bool(y)
        sa += bool(x)
        sb += bool(y)
    return 1.0 if sa + sb == 0 else 2.0 * inter / (sa + sb)


def sort_top_k(values, k):
    """Indices of the k largest values, ties to the lower index, ascending."""
    keyed = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return sorted(keyed[:k])


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g
