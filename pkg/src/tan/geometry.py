"""Affine transforms between landmark triples and the canonical shape template."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .data import DEGENERACY_THRESHOLD, DegenerateError, LandmarkTriple, normalized_triangle_area

CANVAS = 224

# ROI expansion around the landmark bounding box, as fractions of its size
ROI_EXPAND_LEFT = 0.5
ROI_EXPAND_BOTTOM = 0.5
ROI_MARGIN = 0.05


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix ``[[a, b, tx], [c, d, ty]]`` acting on column vectors ``[x, y, 1]``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(2, 3)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def from_params(cls, scale=1.0, rotation_deg=0.0, tx=0.0, ty=0.0, center=(0.0, 0.0)) -> "AffineTransform":
        """Rotation + isotropic scale about ``center``, then translation."""
        th = np.deg2rad(rotation_deg)
        a = scale * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        c = np.asarray(center, dtype=float)
        t = c - a @ c + np.array([tx, ty])
        return cls(np.hstack([a, t[:, None]]))

    @property
    def det(self) -> float:
        return float(self.m[0, 0] * self.m[1, 1] - self.m[0, 1] * self.m[1, 0])

    def matrix3(self) -> np.ndarray:
        return np.vstack([self.m, [0.0, 0.0, 1.0]])

    def apply(self, pts) -> np.ndarray:
        return apply_to_points(self, pts)

    def inverse(self) -> "AffineTransform":
        return invert(self)

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """``self`` after ``other``: x -> self(other(x))."""
        return AffineTransform((self.matrix3() @ other.matrix3())[:2])

    def to_json(self) -> list:
        return self.m.tolist()


@dataclass(frozen=True)
class ShapeTemplate:
    landmarks: LandmarkTriple
    canvas: Tuple[int, int] = (CANVAS, CANVAS)

    def to_json(self) -> dict:
        d = {"canvas": list(self.canvas)}
        d.update(self.landmarks.to_json())
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ShapeTemplate":
        return cls(LandmarkTriple.from_json(d), tuple(int(v) for v in d.get("canvas", (CANVAS, CANVAS))))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ShapeTemplate":
        return cls.from_json(json.loads(Path(path).read_text()))


def _check_triple(pts: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(pts)):
        raise DegenerateError(f"{what} triple has non-finite coordinates")
    if normalized_triangle_area(pts) < DEGENERACY_THRESHOLD:
        raise DegenerateError(f"{what} triple is collinear")


def _as_pts(t) -> np.ndarray:
    if isinstance(t, LandmarkTriple):
        return t.as_array()
    return np.asarray(t, dtype=float).reshape(3, 2)


def estimate_affine(src, dst) -> AffineTransform:
    """Exact affine map taking the three ``src`` points onto the three ``dst`` points."""
    s = _as_pts(src)
    d = _as_pts(dst)
    _check_triple(s, "source")
    _check_triple(d, "target")
    # work relative to the first point for conditioning; Cramer's rule on the 2x2 part
    e1, e2 = s[1] - s[0], s[2] - s[0]
    f1, f2 = d[1] - d[0], d[2] - d[0]
    det = e1[0] * e2[1] - e2[0] * e1[1]
    a = (f1[0] * e2[1] - f2[0] * e1[1]) / det
    b = (e1[0] * f2[0] - e2[0] * f1[0]) / det
    c = (f1[1] * e2[1] - f2[1] * e1[1]) / det
    dd = (e1[0] * f2[1] - e2[0] * f1[1]) / det
    tx = d[0, 0] - (a * s[0, 0] + b * s[0, 1])
    ty = d[0, 1] - (c * s[0, 0] + dd * s[0, 1])
    return AffineTransform(np.array([[a, b, tx], [c, dd, ty]]))


def invert(t: AffineTransform) -> AffineTransform:
    a, b, tx = t.m[0]
    c, d, ty = t.m[1]
    det = a * d - b * c
    if abs(det) <= 1e-12:
        raise DegenerateError(f"affine transform is singular (det={det:g})")
    ia, ib = d / det, -b / det
    ic, id_ = -c / det, a / det
    return AffineTransform(np.array([[ia, ib, -(ia * tx + ib * ty)], [ic, id_, -(ic * tx + id_ * ty)]]))


def apply_to_points(t: AffineTransform, pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    flat = p.reshape(-1, 2)
    out = flat @ t.m[:, :2].T + t.m[:, 2]
    return out.reshape(p.shape)


def map_triple(t: AffineTransform, lmk: LandmarkTriple) -> LandmarkTriple:
    return LandmarkTriple.from_array(apply_to_points(t, lmk.as_array()))


def roi_to_canvas(x0: float, y0: float, x1: float, y1: float, canvas: int = CANVAS) -> AffineTransform:
    """Map the box ``[x0,x1] x [y0,y1]`` (continuous extent) onto the canvas extent
    ``[-0.5, canvas-0.5]`` preserving aspect ratio, padding the short side evenly."""
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise DegenerateError("ROI has no extent")
    s = canvas / max(w, h)
    ox = -0.5 + 0.5 * (canvas - s * w)
    oy = -0.5 + 0.5 * (canvas - s * h)
    return AffineTransform(np.array([[s, 0.0, ox - s * x0], [0.0, s, oy - s * y0]]))


def letterbox(width: int, height: int, canvas: int = CANVAS) -> AffineTransform:
    """Whole-image -> canvas map used for frames without a landmark prior."""
    return roi_to_canvas(-0.5, -0.5, width - 0.5, height - 0.5, canvas)


def expanded_roi(pts: np.ndarray) -> Tuple[float, float, float, float]:
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    wb, hb = x1 - x0, y1 - y0
    return (
        x0 - ROI_EXPAND_LEFT * wb,
        y0 - ROI_MARGIN * hb,
        x1 + ROI_MARGIN * wb,
        y1 + ROI_EXPAND_BOTTOM * hb,
    )


def place_template(mean_pts, canvas: int = CANVAS) -> ShapeTemplate:
    """Put a mean landmark triple on the canvas so its expanded ROI fills it."""
    pts = _as_pts(mean_pts)
    _check_triple(pts, "mean")
    t = roi_to_canvas(*expanded_roi(pts), canvas=canvas)
    return ShapeTemplate(LandmarkTriple.from_array(t.apply(pts)), (canvas, canvas))


def mean_normalized_triple(samples: Sequence[LandmarkTriple], frame_dims: Sequence[Tuple[int, int]]) -> np.ndarray:
    if len(samples) == 0:
        raise ValueError("template needs at least one landmark sample")
    if len(samples) != len(frame_dims):
        raise ValueError("samples and frame_dims differ in length")
    acc = np.zeros((3, 2))
    for lmk, (w, h) in zip(samples, frame_dims):
        acc += lmk.as_array() / np.array([w, h], dtype=float)
    return acc / len(samples)


def build_template(samples: Sequence[LandmarkTriple], frame_dims: Sequence[Tuple[int, int]], canvas: int = CANVAS) -> ShapeTemplate:
    return place_template(mean_normalized_triple(samples, frame_dims), canvas)
