"""Core value types, frame/annotation I/O and mask <-> contour conversion.

Coordinate convention used across the package: pixel ``(row i, col j)`` has
its center at the continuous point ``(x=j, y=i)`` and covers the unit square
``[j-0.5, j+0.5] x [i-0.5, i+0.5]``.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

PLANES = ("A2C", "A4C")
FRAME_RE = re.compile(r"^frame_(\d{5})\.(pgm|png)$")

# normalized triangle area (area / bbox diagonal**2) below which a triple is degenerate
DEGENERACY_THRESHOLD = 1e-6


class TanError(Exception):
    """Base class for package errors."""


class LoadError(TanError):
    pass


class SchemaError(TanError):
    pass


class DegenerateError(TanError, ValueError):
    pass


class SplitMaskWarning(UserWarning):
    """Mask had several foreground components; only the largest was kept."""


@dataclass(frozen=True)
class LandmarkTriple:
    apex: Tuple[float, float]
    annulus_left: Tuple[float, float]
    annulus_right: Tuple[float, float]

    def __post_init__(self):
        pts = self.as_array()
        if not np.all(np.isfinite(pts)):
            raise DegenerateError("landmark coordinates must be finite")

    @classmethod
    def from_array(cls, pts) -> "LandmarkTriple":
        pts = np.asarray(pts, dtype=float).reshape(3, 2)
        return cls(*(tuple(float(v) for v in p) for p in pts))

    def as_array(self) -> np.ndarray:
        return np.array([self.apex, self.annulus_left, self.annulus_right], dtype=float)

    def normalized_area(self) -> float:
        return normalized_triangle_area(self.as_array())

    def is_degenerate(self) -> bool:
        return self.normalized_area() < DEGENERACY_THRESHOLD

    def to_json(self) -> dict:
        return {
            "apex": list(self.apex),
            "annulus_left": list(self.annulus_left),
            "annulus_right": list(self.annulus_right),
        }

    @classmethod
    def from_json(cls, d: dict) -> "LandmarkTriple":
        try:
            return cls(
                tuple(map(float, d["apex"])),
                tuple(map(float, d["annulus_left"])),
                tuple(map(float, d["annulus_right"])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"bad landmarks entry: {d!r}") from e


def normalized_triangle_area(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=float)
    e1 = pts[1] - pts[0]
    e2 = pts[2] - pts[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    span = pts.max(axis=0) - pts.min(axis=0)
    diag2 = float(span @ span)
    if diag2 == 0.0:
        return 0.0
    return area / diag2


def check_frame(pixels) -> np.ndarray:
    """Validate and return a frame as a read-only float64 array in [0, 1]."""
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"frame must be a non-empty 2D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("frame intensities must be finite and within [0, 1]")
    return a


def check_mask(labels, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    m = np.asarray(labels)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"mask shape {m.shape} does not match frame shape {tuple(shape)}")
    if m.dtype != np.uint8:
        if not np.all(np.isin(m, (0, 1))):
            raise ValueError("mask values must be 0 or 1")
        m = m.astype(np.uint8)
    elif m.max(initial=0) > 1:
        raise ValueError("mask values must be 0 or 1")
    return m


@dataclass
class VideoSequence:
    frames: List[np.ndarray]
    frame_ids: List[int]
    fps_hint: Optional[float] = None

    def __post_init__(self):
        if not self.frames:
            raise LoadError("no frames")
        if len(self.frames) != len(self.frame_ids):
            raise ValueError("frames and frame_ids differ in length")
        if any(b <= a for a, b in zip(self.frame_ids, self.frame_ids[1:])):
            raise ValueError("frame ids must be strictly increasing")
        shape = self.frames[0].shape
        for fid, f in zip(self.frame_ids, self.frames):
            if f.shape != shape:
                raise LoadError(f"frame {fid} has shape {f.shape}, expected {shape}")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].shape


@dataclass
class FrameAnnotation:
    mask: Optional[np.ndarray] = None
    landmarks: Optional[LandmarkTriple] = None
    plane: Optional[str] = None
    mask_path: Optional[str] = None


@dataclass
class AnnotationSet:
    sequence: str
    plane: Optional[str]
    frames: Dict[int, FrameAnnotation] = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    def plane_of(self, frame_id: int) -> Optional[str]:
        ann = self.frames.get(frame_id)
        if ann is not None and ann.plane is not None:
            return ann.plane
        return self.plane


# ---------------------------------------------------------------- frame I/O


def read_gray(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1"):
                raise LoadError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
            a = np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise LoadError(f"{path}: cannot read image ({e})") from e
    return a


def write_gray(path, values: np.ndarray) -> None:
    """Write a [0,1] float grid (or uint8 grid) as 8-bit grayscale PGM/PNG."""
    v = np.asarray(values)
    if v.dtype != np.uint8:
        v = np.clip(np.round(255.0 * v), 0, 255).astype(np.uint8)
    Image.fromarray(v, mode="L").save(path)


def write_mask(path, mask: np.ndarray) -> None:
    write_gray(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def read_mask(path) -> np.ndarray:
    return (read_gray(path) >= 128).astype(np.uint8)


def load_sequence(directory) -> VideoSequence:
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"{directory}: not a directory")
    found = []
    for p in directory.iterdir():
        m = FRAME_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    if not found:
        raise LoadError(f"{directory}: no frames")
    found.sort()
    ids = [i for i, _ in found]
    if len(set(ids)) != len(ids):
        raise LoadError(f"{directory}: duplicate frame indices")
    frames = []
    shape = None
    for i, p in found:
        a = read_gray(p)
        if shape is None:
            shape = a.shape
        elif a.shape != shape:
            raise LoadError(f"{p}: dimension mismatch {a.shape[::-1]} vs {shape[::-1]}")
        frames.append(a.astype(np.float64) / 255.0)
    return VideoSequence(frames, ids)


def save_sequence(seq: VideoSequence, directory, ext: str = "pgm") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in zip(seq.frame_ids, seq.frames):
        write_gray(directory / f"frame_{i:05d}.{ext}", f)


# ----------------------------------------------------------- annotation I/O


def load_annotations(path, frame_ids: Optional[Sequence[int]] = None) -> AnnotationSet:
    """Read an annotation JSON file; mask paths resolve relative to the file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise LoadError(f"{path}: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise SchemaError(f"{path}: top level must be an object with a 'frames' list")
    plane = doc.get("plane")
    if plane is not None and plane not in PLANES:
        raise SchemaError(f"{path}: plane must be one of {PLANES}, got {plane!r}")
    known = None if frame_ids is None else set(frame_ids)
    anns = AnnotationSet(sequence=str(doc.get("sequence", path.stem)), plane=plane)
    shape = None
    for entry in doc["frames"]:
        if not isinstance(entry, dict) or not isinstance(entry.get("id"), int):
            raise SchemaError(f"{path}: every frame entry needs an integer 'id'")
        fid = entry["id"]
        if fid in anns.frames:
            raise SchemaError(f"{path}: duplicate frame id {fid}")
        if known is not None and fid not in known:
            raise SchemaError(f"{path}: dangling frame id {fid}")
        ann = FrameAnnotation()
        if entry.get("landmarks") is not None:
            lmk = LandmarkTriple.from_json(entry["landmarks"])
            if lmk.is_degenerate():
                raise DegenerateError(f"{path}: frame {fid} landmarks are collinear")
            ann.landmarks = lmk
        if entry.get("mask") is not None:
            mp = path.parent / entry["mask"]
            if not mp.exists():
                raise SchemaError(f"{path}: frame {fid} mask {mp} does not exist")
            ann.mask = read_mask(mp)
            ann.mask_path = entry["mask"]
            if shape is None:
                shape = ann.mask.shape
            elif ann.mask.shape != shape:
                raise SchemaError(f"{path}: frame {fid} mask dimension mismatch")
        if entry.get("plane") is not None:
            if entry["plane"] not in PLANES:
                raise SchemaError(f"{path}: frame {fid} has bad plane {entry['plane']!r}")
            ann.plane = entry["plane"]
        anns.frames[fid] = ann
    return anns


def save_annotations(anns: AnnotationSet, path, mask_dir: str = "masks") -> None:
    """Write annotations as JSON, masks as PGMs under ``mask_dir`` next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for fid in sorted(anns.frames):
        ann = anns.frames[fid]
        e = {"id": fid}
        if ann.landmarks is not None:
            e["landmarks"] = ann.landmarks.to_json()
        if ann.mask is not None:
            rel = f"{mask_dir}/mask_{fid:05d}.pgm"
            (path.parent / mask_dir).mkdir(parents=True, exist_ok=True)
            write_mask(path.parent / rel, ann.mask)
            e["mask"] = rel
        if ann.plane is not None:
            e["plane"] = ann.plane
        entries.append(e)
    doc = {"sequence": anns.sequence, "plane": anns.plane, "frames": entries}
    path.write_text(json.dumps(doc, indent=1))


# ------------------------------------------------------ rasterization


def _edge_lattice_points(p0, p1, w, h, out: np.ndarray, tol: float = 1e-9) -> None:
    """Set every pixel whose center lies on segment p0-p1."""
    (x0, y0), (x1, y1) = p0, p1
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) >= abs(dy):
        if dx == 0.0:
            xs = np.array([np.round(x0)]) if abs(x0 - np.round(x0)) <= tol else np.empty(0)
            ys = np.array([np.round(y0)]) if xs.size else np.empty(0)
        else:
            lo, hi = sorted((x0, x1))
            xs = np.arange(np.ceil(lo - tol), np.floor(hi + tol) + 1)
            ys = y0 + (xs - x0) * dy / dx
    else:
        lo, hi = sorted((y0, y1))
        ys = np.arange(np.ceil(lo - tol), np.floor(hi + tol) + 1)
        xs = x0 + (ys - y0) * dx / dy
    if xs.size == 0:
        return
    on = (np.abs(xs - np.round(xs)) <= tol) & (np.abs(ys - np.round(ys)) <= tol)
    xi = np.round(xs[on]).astype(int)
    yi = np.round(ys[on]).astype(int)
    keep = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out[yi[keep], xi[keep]] = 1


def mask_from_contour(points, w: int, h: int) -> np.ndarray:
    """Rasterize a closed polygon: a pixel is 1 iff its center is inside (even-odd)
    or lies exactly on an edge."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateError("contour needs at least 3 points")
    mask = np.zeros((h, w), dtype=np.uint8)
    p0 = pts
    p1 = np.roll(pts, -1, axis=0)
    y0, y1 = p0[:, 1], p1[:, 1]
    x0, x1 = p0[:, 0], p1[:, 0]
    ylo = max(int(np.ceil(min(pts[:, 1].min(), h))), 0)
    yhi = min(int(np.floor(pts[:, 1].max())), h - 1)
    if yhi >= ylo:
        rows = np.arange(ylo, yhi + 1, dtype=float)[:, None]
        # half-open rule on y so vertices are counted once
        crosses = ((y0 <= rows) & (rows < y1)) | ((y1 <= rows) & (rows < y0))
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (rows - y0) * (x1 - x0) / (y1 - y0)
        xc = np.where(crosses, xc, np.inf)
        xc.sort(axis=1)
        counts = crosses.sum(axis=1)
        for r, (row, n) in enumerate(zip(xc, counts)):
            for k in range(0, n - 1, 2):
                a = max(int(np.ceil(row[k])), 0)
                b = min(int(np.floor(row[k + 1])), w - 1)
                if b >= a:
                    mask[ylo + r, a:b + 1] = 1
    for a, b in zip(p0, p1):
        _edge_lattice_points(a, b, w, h, mask)
    return mask


# ------------------------------------------------------ boundary tracing

_RIGHT_TURN = {(1, 0): (0, 1), (0, 1): (-1, 0), (-1, 0): (0, -1), (0, -1): (1, 0)}


def largest_component(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """Largest 4-connected foreground component with holes filled, plus the
    number of components found."""
    lab, n = ndimage.label(mask > 0)
    if n == 0:
        return np.zeros_like(mask, dtype=bool), 0
    if n == 1:
        comp = lab == 1
    else:
        sizes = np.bincount(lab.ravel())[1:]
        comp = lab == (int(np.argmax(sizes)) + 1)
    return _fill_holes(comp), n


def _fill_holes(comp: np.ndarray) -> np.ndarray:
    """Fill background pockets not 8-connected to the border, working on the
    padded bounding box only."""
    rows = np.flatnonzero(comp.any(axis=1))
    cols = np.flatnonzero(comp.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    crop = np.pad(comp[r0:r1, c0:c1], 1)
    # background is 8-connected when foreground is 4-connected
    bg, _ = ndimage.label(~crop, structure=np.ones((3, 3), bool))
    out = comp.copy()
    out[r0:r1, c0:c1] |= (bg != bg[0, 0])[1:-1, 1:-1]
    return out


def contour_from_mask(mask) -> np.ndarray:
    """Outer boundary of the largest component as a closed polyline along pixel
    edges (corner points only), positively oriented in (x, y)."""
    m = np.asarray(mask)
    comp, n = largest_component(m)
    if n == 0:
        raise DegenerateError("empty mask has no contour")
    if n > 1:
        warnings.warn(f"mask has {n} components; keeping the largest", SplitMaskWarning, stacklevel=2)
    c = np.pad(comp, 1)
    fg = c[1:-1, 1:-1]
    rr, cc = np.nonzero(fg)
    # corner lattice: corner (X, Y) sits at (X - 0.5, Y - 0.5) in pixel coords
    out: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}

    def add(sel, sx, sy, ex, ey):
        for r, q in zip(rr[sel], cc[sel]):
            out.setdefault((q + sx, r + sy), []).append((ex, ey))

    add(~c[rr, cc + 1], 0, 0, 1, 0)      # top edge, background above
    add(~c[rr + 1, cc + 2], 1, 0, 0, 1)  # right edge
    add(~c[rr + 2, cc + 1], 1, 1, -1, 0)  # bottom edge
    add(~c[rr + 1, cc], 0, 1, 0, -1)      # left edge

    r0 = rr.min()
    q0 = cc[rr == r0].min()
    start = (int(q0), int(r0))
    pos = start
    d = (1, 0)
    verts = [start]
    n_edges = sum(len(v) for v in out.values())
    for _ in range(n_edges + 1):
        cand = out[pos]
        if len(cand) == 1:
            nd = cand[0]
        else:
            rt = _RIGHT_TURN[d]
            nd = rt if rt in cand else cand[0]
        pos = (pos[0] + nd[0], pos[1] + nd[1])
        d = nd
        if pos == start:
            break
        verts.append(pos)
    v = np.array(verts, dtype=float) - 0.5
    return simplify_collinear(v)


def simplify_collinear(pts: np.ndarray) -> np.ndarray:
    """Drop vertices lying on the straight line through their neighbours."""
    if len(pts) <= 3:
        return pts
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (nxt[:, 0] - pts[:, 0])
    keep = np.abs(cross) > 1e-12
    if keep.sum() < 3:
        return pts
    return pts[keep]


def polygon_area(pts) -> float:
    """Signed shoelace area (positive for the package's contour orientation)."""
    p = np.asarray(pts, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
