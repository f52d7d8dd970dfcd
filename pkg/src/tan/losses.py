"""Training objectives with closed-form gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .data import LandmarkTriple
from .geometry import CANVAS, ShapeTemplate

PLANE_INDEX = {"A2C": 0, "A4C": 1}


@dataclass(frozen=True)
class LossWeights:
    lambda_pln: float = 0.1
    lambda_lmk: float = 0.1
    lambda_seg: float = 10.0

    def __post_init__(self):
        w = (self.lambda_pln, self.lambda_lmk, self.lambda_seg)
        if min(w) < 0 or max(w) == 0:
            raise ValueError("loss weights must be >= 0 and not all zero")


@dataclass(frozen=True)
class HetGateConfig:
    hausdorff_threshold: float = 20.0

    def __post_init__(self):
        if not self.hausdorff_threshold > 0:
            raise ValueError("hausdorff_threshold must be > 0")


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def seg_loss(logits: np.ndarray, label: np.ndarray):
    """Per-pixel softmax cross-entropy.

    ``logits`` has shape (..., 2), ``label`` the matching (...) grid of {0, 1}.
    Returns (per-pixel loss map, mean loss, d mean / d logits).
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(label)
    if z.shape[:-1] != y.shape or z.shape[-1] != 2:
        raise ValueError(f"logits {z.shape} do not match label {y.shape}")
    ls = log_softmax(z)
    yi = y.astype(np.intp)[..., None]
    loss_map = -np.take_along_axis(ls, yi, axis=-1)[..., 0]
    p = np.exp(ls)
    grad = p.copy()
    np.put_along_axis(grad, yi, np.take_along_axis(p, yi, axis=-1) - 1.0, axis=-1)
    grad /= loss_map.size
    return loss_map, float(loss_map.mean()), grad


def ohem_select(loss_map: np.ndarray, fraction: float = 0.10) -> np.ndarray:
    """Flat (row-major) indices of the ceil(fraction * N) largest losses; ties go
    to the smaller index."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    flat = np.asarray(loss_map, dtype=float).ravel()
    if flat.size == 0:
        raise ValueError("empty loss map")
    k = math.ceil(fraction * flat.size)
    order = np.argsort(-flat, kind="stable")
    return np.sort(order[:k])


def ohem_seg_loss(logits: np.ndarray, label: np.ndarray, fraction: float = 0.10):
    """Cross-entropy averaged over the OHEM-selected pixels only."""
    loss_map, _, _ = seg_loss(logits, label)
    idx = ohem_select(loss_map, fraction)
    z = np.asarray(logits, dtype=float).reshape(-1, 2)
    y = np.asarray(label).ravel()
    sel_map, mean, g = seg_loss(z[idx], y[idx])
    grad = np.zeros_like(z)
    grad[idx] = g
    return loss_map, mean, grad.reshape(np.shape(logits))


def smooth_l1(x: np.ndarray):
    ax = np.abs(x)
    val = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    grad = np.where(ax < 1.0, x, np.sign(x))
    return val, grad


def drift_target(gt: LandmarkTriple, tmpl: ShapeTemplate) -> np.ndarray:
    """Landmark offsets from the template, scaled by 1/canvas, flattened to 6."""
    return ((gt.as_array() - tmpl.landmarks.as_array()) / CANVAS).ravel()


def landmark_loss(pred_drift, gt: LandmarkTriple, tmpl: ShapeTemplate) -> Tuple[float, np.ndarray]:
    pred = np.asarray(pred_drift, dtype=float).ravel()
    if pred.size != 6:
        raise ValueError("pred_drift must hold 6 values")
    val, grad = smooth_l1(pred - drift_target(gt, tmpl))
    return float(val.sum()), grad


def plane_loss(logits, label) -> Tuple[float, np.ndarray]:
    z = np.asarray(logits, dtype=float)
    k = PLANE_INDEX[label] if isinstance(label, str) else int(label)
    ls = log_softmax(z)
    grad = np.exp(ls)
    grad[k] -= 1.0
    return float(-ls[k]), grad


def combine_losses(l_pln: float, l_lmk: float, l_seg: float, w: LossWeights = LossWeights()) -> float:
    return w.lambda_pln * l_pln + w.lambda_lmk * l_lmk + w.lambda_seg * l_seg


def gate_open(haus: float, cfg: HetGateConfig = HetGateConfig()) -> bool:
    if haus < 0 or math.isnan(haus):
        raise ValueError("hausdorff distance must be >= 0")
    return haus <= cfg.hausdorff_threshold


def heterogeneous_loss(l_gt_prev: float, l_of_cur: float, haus: float, cfg: HetGateConfig = HetGateConfig()) -> float:
    """Sum of the two path losses when the tracked label agrees with the
    reference within the threshold, else 0 (nothing is back-propagated)."""
    return l_gt_prev + l_of_cur if gate_open(haus, cfg) else 0.0
