"""Segmentation, landmark and temporal-smoothness metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import LandmarkTriple
from .polyline import directed_mean

log = logging.getLogger(__name__)

OKS_KAPPA = 0.1


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (sa + sb)


def asd(a, b) -> float:
    """Symmetric average surface distance between two closed contours (px)."""
    return 0.5 * (directed_mean(a, b) + directed_mean(b, a))


def video_smoothness(contours: Sequence) -> float:
    """Mean ASD between consecutive frames of one video."""
    if len(contours) < 2:
        raise ValueError("need at least two frames")
    steps = [asd(contours[t - 1], contours[t]) for t in range(1, len(contours))]
    return float(np.mean(steps))


def smoothness_index(videos: Sequence[Sequence]) -> float:
    """Average over videos of the mean consecutive-frame ASD; videos with fewer
    than two frames are skipped."""
    per_video = []
    for k, v in enumerate(videos):
        if len(v) < 2:
            log.warning("video %d has %d frame(s); excluded from SI", k, len(v))
            continue
        per_video.append(video_smoothness(v))
    if not per_video:
        raise ValueError("no video with at least two frames")
    return float(np.mean(per_video))


def oks(pred: LandmarkTriple, gt: LandmarkTriple, object_area: float, kappa: float = OKS_KAPPA) -> float:
    if not object_area > 0:
        raise ValueError("object area must be positive")
    d2 = ((pred.as_array() - gt.as_array()) ** 2).sum(axis=1)
    s2 = float(object_area)
    return float(np.mean(np.exp(-d2 / (2.0 * s2 * kappa ** 2))))


def accuracy(pred: Sequence, gt: Sequence) -> float:
    if len(pred) != len(gt):
        raise ValueError("pred and gt differ in length")
    if len(gt) == 0:
        raise ValueError("empty label list")
    return sum(p == g for p, g in zip(pred, gt)) / len(gt)


def worst_fraction(values: Sequence[float], fraction: float = 0.1, higher_is_worse: bool = False) -> float:
    """Mean over the ceil(fraction * N) worst values (stable w.r.t. input order)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty value list")
    k = math.ceil(fraction * v.size)
    order = np.argsort(-v if higher_is_worse else v, kind="stable")
    return float(v[order[:k]].mean())


@dataclass
class FrameMetrics:
    frame_id: int
    dice: float
    asd: float
    oks: Optional[float] = None
    plane_pred: Optional[str] = None
    plane_gt: Optional[str] = None


@dataclass
class SequenceEval:
    frames: List[FrameMetrics] = field(default_factory=list)
    si: Optional[float] = None
    si_gt: Optional[float] = None
    coverage: float = 1.0

    def aggregates(self) -> Dict[str, Optional[float]]:
        return aggregate([self])

    def to_json(self) -> dict:
        return {"frames": [asdict(f) for f in self.frames], "si": self.si, "si_gt": self.si_gt,
                "coverage": self.coverage, "aggregates": self.aggregates()}


def aggregate(evals: Sequence[SequenceEval], fraction: float = 0.1) -> Dict[str, Optional[float]]:
    """Pooled report over one or more sequences, with worst-``fraction`` columns."""
    rows = [f for e in evals for f in e.frames]
    d = [f.dice for f in rows]
    a = [f.asd for f in rows if np.isfinite(f.asd)]
    o = [f.oks for f in rows if f.oks is not None]
    pl = [(f.plane_pred, f.plane_gt) for f in rows if f.plane_gt is not None and f.plane_pred is not None]
    sis = [e.si for e in evals if e.si is not None]
    return {
        "dice_mean": float(np.mean(d)) if d else None,
        "dice_worst10": worst_fraction(d, fraction) if d else None,
        "asd_mean": float(np.mean(a)) if a else None,
        "asd_worst10": worst_fraction(a, fraction, higher_is_worse=True) if a else None,
        "si": float(np.mean(sis)) if sis else None,
        "si_worst10": worst_fraction(sis, fraction, higher_is_worse=True) if sis else None,
        "oks_mean": float(np.mean(o)) if o else None,
        "plane_acc": accuracy([p for p, _ in pl], [g for _, g in pl]) if pl else None,
    }
