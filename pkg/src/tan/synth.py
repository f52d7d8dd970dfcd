"""Echo-like synthetic apical sequences with exact ground truth, and the
training-time random affine augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .data import AnnotationSet, FrameAnnotation, LandmarkTriple, VideoSequence, check_mask
from .geometry import AffineTransform, map_triple
from .warping import WarpSpec, warp_image, warp_mask

# intensity levels before speckle
BLOOD = 0.05
TISSUE = 0.30
MYOCARDIUM = 0.62
LEAFLET = 0.72

# profile of the cavity half-width from base (s=0) to apex (s=1)
PROFILE_POWER = 2.0
PROFILE_TAPER = 0.3


@dataclass(frozen=True)
class SynthConfig:
    dims: Tuple[int, int] = (384, 384)  # (width, height)
    frames_per_cycle: int = 30
    cycles: float = 1.0
    n_frames: Optional[int] = None  # overrides frames_per_cycle * cycles
    phase0: float = 0.0  # starting phase in cycles; 0 = end-diastole
    half_width: float = 36.0  # cavity half-width at the base, end-diastole
    length: float = 120.0  # apex-to-base length, end-diastole
    amplitude: float = 0.35  # fractional shrink of the half-width at end-systole
    orientation_deg: float = 0.0
    apex: Optional[Tuple[float, float]] = None  # default (0.56 w, 0.2 h)
    wall: float = 9.0
    speckle_var: float = 0.09
    speckle_frame_fraction: float = 0.5  # share of speckle variance redrawn every frame
    dropout_prob: float = 0.3
    dropout_width_deg: float = 40.0
    valve_flap: bool = True
    gain: float = 1.0
    plane: str = "A4C"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1)")
        if min(self.dims) < 64:
            raise ValueError("dims must be >= 64")
        if self.plane not in ("A2C", "A4C"):
            raise ValueError("plane must be A2C or A4C")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown synth config keys: {sorted(extra)}")
        kw = dict(d)
        for k in ("dims", "apex"):
            if kw.get(k) is not None:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    @property
    def frame_count(self) -> int:
        if self.n_frames is not None:
            return int(self.n_frames)
        return max(1, int(round(self.frames_per_cycle * self.cycles)))

    def apex_xy(self) -> Tuple[float, float]:
        if self.apex is not None:
            return tuple(self.apex)
        w, h = self.dims
        return (0.56 * w, 0.2 * h)


@dataclass(frozen=True)
class AugConfig:
    rotation_deg: Tuple[float, float] = (-5.0, 5.0)
    scale: Tuple[float, float] = (0.8, 1.2)
    max_translation: float = 14.0
    seed: int = 0


def phase_of(cfg: SynthConfig, t: int) -> float:
    """Contraction state in [0, 1]: 0 at end-diastole, 1 at end-systole."""
    cyc = cfg.phase0 + t / cfg.frames_per_cycle
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * cyc))


def valve_opening(cfg: SynthConfig, t: int) -> float:
    cyc = cfg.phase0 + t / cfg.frames_per_cycle
    return max(0.0, -np.sin(2.0 * np.pi * cyc))


def profile(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return (1 - PROFILE_TAPER) * (1 - s ** PROFILE_POWER) ** (1 / PROFILE_POWER) + PROFILE_TAPER * (1 - s)


class _Frame:
    """Local LV coordinates for every pixel: y runs apex (0) -> base, x lateral."""

    def __init__(self, cfg: SynthConfig):
        w, h = cfg.dims
        self.cfg = cfg
        yy, xx = np.mgrid[0:h, 0:w].astype(float)
        self.xx, self.yy = xx, yy
        th = np.deg2rad(cfg.orientation_deg)
        self.axis_y = np.array([-np.sin(th), np.cos(th)])  # apex -> base direction
        self.axis_x = np.array([np.cos(th), np.sin(th)])
        ax, ay = cfg.apex_xy()
        dx, dy = xx - ax, yy - ay
        self.lx = dx * self.axis_x[0] + dy * self.axis_x[1]
        self.ly = dx * self.axis_y[0] + dy * self.axis_y[1]

    def to_image(self, lx, ly):
        ax, ay = self.cfg.apex_xy()
        return (ax + lx * self.axis_x[0] + ly * self.axis_y[0],
                ay + lx * self.axis_x[1] + ly * self.axis_y[1])


def _tapered(lx, ly, a, length, y0=0.0):
    """Inside test for the tapered shape with apex at local y0."""
    yl = ly - y0
    s = 1.0 - yl / length
    return (yl >= 0) & (yl <= length) & (np.abs(lx) <= a * profile(s))


def _ellipse(lx, ly, cx, cy, rx, ry):
    return ((lx - cx) / rx) ** 2 + ((ly - cy) / ry) ** 2 <= 1.0


def lv_geometry(cfg: SynthConfig, t: int):
    phi = phase_of(cfg, t)
    a = cfg.half_width * (1.0 - cfg.amplitude * phi)
    length = cfg.length * (1.0 - 0.75 * cfg.amplitude * phi)
    return a, length, phi


def landmarks_at(cfg: SynthConfig, t: int) -> LandmarkTriple:
    a, length, _ = lv_geometry(cfg, t)
    ax, ay = cfg.apex_xy()
    th = np.deg2rad(cfg.orientation_deg)
    ux, uy = np.array([np.cos(th), np.sin(th)]), np.array([-np.sin(th), np.cos(th)])
    pts = [(ax + lx * ux[0] + ly * uy[0], ay + lx * ux[1] + ly * uy[1])
           for lx, ly in ((0.0, 0.0), (-a, length), (a, length))]
    return LandmarkTriple.from_array(pts)


def _noise_field(rng, shape, sigma=1.2):
    g = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    return g / (g.std() + 1e-12)


def render_frame(cfg: SynthConfig, geo: _Frame, t: int, speckle_ref: np.ndarray, rng) -> Tuple[np.ndarray, np.ndarray]:
    w, h = cfg.dims
    a, length, phi = lv_geometry(cfg, t)
    lx, ly = geo.lx, geo.ly
    a0, l0 = cfg.half_width, cfg.length
    wall = cfg.wall * (1.0 + 0.3 * phi)

    cavity = _tapered(lx, ly, a, length)
    outer = _tapered(lx, ly, a + wall, length + wall, y0=-wall) & (ly <= length)
    img = np.full((h, w), TISSUE)

    # neighbouring chambers first so the LV draws over them
    la_scale = 1.0 + 0.15 * phi
    gap = 6.0
    la_ry = 0.33 * l0 * la_scale
    la = _ellipse(lx, ly, 0.0, length + gap + la_ry, 0.9 * a0 * la_scale, la_ry)
    img[la] = BLOOD
    if cfg.plane == "A4C":
        rv_cx = -(a0 + cfg.wall + 6.0 + 0.6 * a0)
        rv = _ellipse(lx, ly, rv_cx, 0.6 * l0, 0.6 * a0 * (1.0 - 0.5 * cfg.amplitude * phi), 0.42 * l0)
        rv_wall = _ellipse(lx, ly, rv_cx, 0.6 * l0, 0.6 * a0 + 6.0, 0.42 * l0 + 6.0)
        img[rv_wall] = MYOCARDIUM
        img[rv] = BLOOD
        ra = _ellipse(lx, ly, rv_cx, l0 + gap + 0.28 * l0, 0.62 * a0, 0.28 * l0)
        img[ra] = BLOOD
    img[outer] = MYOCARDIUM
    img[cavity] = BLOOD

    # mitral valve plane: tissue bridge when closed, open channel when filling
    opening = valve_opening(cfg, t)
    valve = (ly > length) & (ly <= length + gap + 2.0) & (np.abs(lx) <= a)
    img[valve] = TISSUE + (BLOOD - TISSUE) * opening
    if cfg.valve_flap and opening > 0.05:
        leaf_len = 0.35 * length * opening
        for side in (-1.0, 1.0):
            # leaflet hinges at the annulus and swings into the cavity
            ang = np.deg2rad(25.0)
            dirx, diry = -side * np.sin(ang), -np.cos(ang)
            px, py = lx - side * a, ly - length
            along = px * dirx + py * diry
            across = np.abs(px * diry - py * dirx)
            img[(along >= 0) & (along <= leaf_len) & (across <= 1.5)] = LEAFLET

    # wall dropout: an arc of the myocardium fades into blood
    if cfg.dropout_prob > 0 and rng.random() < cfg.dropout_prob:
        cx, cy = 0.0, 0.55 * length
        centre = rng.uniform(-np.pi, np.pi)
        half = 0.5 * np.deg2rad(cfg.dropout_width_deg)
        ang = np.arctan2(ly - cy, lx - cx)
        dang = np.abs((ang - centre + np.pi) % (2 * np.pi) - np.pi)
        arc = outer & ~cavity & (dang <= half)
        img[arc] = BLOOD + 0.25 * (MYOCARDIUM - BLOOD)

    # multiplicative speckle; part of it moves with the tissue
    sw = 1.0 - cfg.amplitude * phi
    sl = 1.0 - 0.75 * cfg.amplitude * phi
    rx, ry = geo.to_image(lx / sw, ly / sl)
    moving = ndimage.map_coordinates(speckle_ref, [ry, rx], order=1, mode="reflect")
    f = cfg.speckle_frame_fraction
    g = np.sqrt(1.0 - f) * moving + np.sqrt(f) * _noise_field(rng, (h, w))
    img = img * (1.0 + np.sqrt(cfg.speckle_var) * g)

    # sector geometry and depth attenuation
    dx = geo.xx - 0.5 * w
    dy = geo.yy + 0.05 * h
    r = np.hypot(dx, dy)
    theta = np.arctan2(dx, dy)
    rmax = 1.02 * h
    img *= cfg.gain * (1.0 - 0.35 * r / rmax)
    img[(np.abs(theta) > np.deg2rad(48.0)) | (r > rmax)] = 0.0
    img = ndimage.gaussian_filter(img, 0.7)
    return np.clip(img, 0.0, 1.0), cavity.astype(np.uint8)


def generate_sequence(cfg: SynthConfig = SynthConfig(), name: Optional[str] = None):
    """Render a sequence and its annotations (mask, landmarks, plane per frame)."""
    rng = np.random.default_rng(cfg.seed)
    geo = _Frame(cfg)
    w, h = cfg.dims
    speckle_ref = _noise_field(rng, (h, w))
    frames, anns = [], {}
    for t in range(cfg.frame_count):
        img, mask = render_frame(cfg, geo, t, speckle_ref, rng)
        frames.append(img)
        anns[t] = FrameAnnotation(mask=mask, landmarks=landmarks_at(cfg, t), plane=cfg.plane)
    seq = VideoSequence(frames, list(range(cfg.frame_count)))
    return seq, AnnotationSet(sequence=name or f"synth_{cfg.seed}", plane=cfg.plane, frames=anns)


def random_config(rng: np.random.Generator, **overrides) -> SynthConfig:
    """Sequence-level variation: pose, size, phase, gain, plane."""
    w, h = overrides.get("dims", SynthConfig.dims)
    size = rng.uniform(0.85, 1.15)
    kw = dict(
        phase0=float(rng.uniform(0.0, 1.0)),
        frames_per_cycle=int(rng.integers(24, 37)),
        half_width=float(36.0 * size * rng.uniform(0.9, 1.1)),
        length=float(120.0 * size),
        amplitude=float(rng.uniform(0.25, 0.4)),
        orientation_deg=float(rng.uniform(-20.0, 20.0)),
        apex=(float(rng.uniform(0.42, 0.62) * w), float(rng.uniform(0.12, 0.25) * h)),
        gain=float(rng.uniform(0.8, 1.15)),
        plane=str(rng.choice(["A2C", "A4C"])),
        seed=int(rng.integers(0, 2 ** 31 - 1)),
    )
    kw.update(overrides)
    return SynthConfig(**kw)


def sample_augmentation(cfg: AugConfig, rng: np.random.Generator, center) -> Tuple[AffineTransform, dict]:
    rot = rng.uniform(*cfg.rotation_deg)
    scale = rng.uniform(*cfg.scale)
    mag = rng.uniform(0.0, cfg.max_translation)
    ang = rng.uniform(0.0, 2 * np.pi)
    tx, ty = mag * np.cos(ang), mag * np.sin(ang)
    t = AffineTransform.from_params(scale, rot, tx, ty, center)
    return t, {"rotation_deg": rot, "scale": scale, "tx": tx, "ty": ty}


def augment(frame, mask, lmk: LandmarkTriple, cfg: AugConfig = AugConfig(), rng=None):
    """One random rotation/scale/translation applied consistently to the frame
    (bilinear), its mask (nearest) and its landmarks."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    h, w = np.shape(frame)
    mask = check_mask(mask, (h, w))
    t, params = sample_augmentation(cfg, rng, ((w - 1) / 2.0, (h - 1) / 2.0))
    spec = WarpSpec(t, (w, h))
    return warp_image(frame, spec), warp_mask(mask, spec), map_triple(t, lmk), params
