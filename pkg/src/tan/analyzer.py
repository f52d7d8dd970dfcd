"""Per-frame analysis in the canonical canvas: segmentation mask, landmarks and
plane class.

Two implementations share the :class:`Analyzer` interface: an oracle that
reads (optionally perturbed) ground truth, and a small trainable pixel
classifier whose heads are plain linear maps so every gradient is closed form.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .data import (AnnotationSet, LandmarkTriple, TanError, contour_from_mask, largest_component)
from .flow import FlowConfig, PropagationError, build_pyramid, hausdorff, propagate_contour, reconstruct_mask, resample_contour
from .geometry import CANVAS, AffineTransform, ShapeTemplate, map_triple
from .losses import (PLANE_INDEX, HetGateConfig, LossWeights, combine_losses, drift_target, gate_open, landmark_loss,
                     ohem_select, plane_loss, smooth_l1)
from .warping import WarpSpec, warp_mask

log = logging.getLogger(__name__)

PLANES = ("A2C", "A4C")
N_FEATURES = 7
BLUR_SIZES = (5, 11, 23)
OHEM_FRACTION = 0.10
POOL_CLIP = 3.0


class AnalysisError(TanError):
    pass


@dataclass
class AnalysisResult:
    mask: np.ndarray
    landmarks: LandmarkTriple
    plane_probs: np.ndarray

    def __post_init__(self):
        if self.mask.shape != (CANVAS, CANVAS):
            raise AnalysisError(f"mask must be {CANVAS}x{CANVAS}, got {self.mask.shape}")
        p = np.asarray(self.plane_probs, dtype=float)
        if p.shape != (2,) or np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
            raise AnalysisError(f"plane_probs must be two probabilities summing to 1, got {p}")

    @property
    def plane(self) -> str:
        return PLANES[int(np.argmax(self.plane_probs))]


@dataclass(frozen=True)
class FrameContext:
    """What the pipeline knows about the frame being analyzed."""

    frame_id: int = 0
    transform: Optional[AffineTransform] = None  # original -> canvas
    first_frame: bool = False  # letterboxed, no propagated prior


class Analyzer(Protocol):
    def analyze(self, frame: np.ndarray, ctx: FrameContext = FrameContext()) -> AnalysisResult:
        ...


def analyze(frame: np.ndarray, analyzer: Analyzer, ctx: FrameContext = FrameContext()) -> AnalysisResult:
    if np.shape(frame) != (CANVAS, CANVAS):
        raise AnalysisError(f"analyzer input must be {CANVAS}x{CANVAS}, got {np.shape(frame)}")
    return analyzer.analyze(frame, ctx)


# ------------------------------------------------------------------ oracle


@dataclass(frozen=True)
class OracleConfig:
    mask_noise: int = 0  # erosion/dilation radius (px)
    landmark_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mask_noise < 0 or self.landmark_noise_sigma < 0:
            raise ValueError("oracle noise levels must be >= 0")


def _disk(r: int) -> np.ndarray:
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


class OracleAnalyzer:
    """Returns the ground truth of the frame mapped into the canvas."""

    def __init__(self, annotations: AnnotationSet, cfg: OracleConfig = OracleConfig()):
        self.annotations = annotations
        self.cfg = cfg

    def analyze(self, frame, ctx: FrameContext = FrameContext()) -> AnalysisResult:
        ann = self.annotations.frames.get(ctx.frame_id)
        if ann is None or ann.mask is None or ann.landmarks is None or ctx.transform is None:
            raise AnalysisError(f"oracle has no ground truth for frame {ctx.frame_id}")
        mask = warp_mask(ann.mask, WarpSpec(ctx.transform, (CANVAS, CANVAS)))
        lmk = ctx.transform.apply(ann.landmarks.as_array())
        rng = np.random.default_rng([self.cfg.seed, ctx.frame_id])
        if self.cfg.mask_noise > 0:
            op = ndimage.binary_dilation if rng.random() < 0.5 else ndimage.binary_erosion
            mask = op(mask > 0, _disk(self.cfg.mask_noise)).astype(np.uint8)
        if self.cfg.landmark_noise_sigma > 0:
            lmk = lmk + rng.normal(0.0, self.cfg.landmark_noise_sigma, lmk.shape)
        plane = self.annotations.plane_of(ctx.frame_id)
        probs = np.array([0.5, 0.5]) if plane is None else np.eye(2)[PLANE_INDEX[plane]]
        return AnalysisResult(mask, LandmarkTriple.from_array(lmk), probs)


# -------------------------------------------------------- pixel classifier


def pixel_features(frame: np.ndarray) -> np.ndarray:
    """(H, W, 7): intensity, three box blurs, gradient magnitude, u, v."""
    f = np.asarray(frame, dtype=np.float64)
    h, w = f.shape
    out = np.empty((h, w, N_FEATURES))
    out[..., 0] = f
    for k, s in enumerate(BLUR_SIZES):
        out[..., 1 + k] = ndimage.uniform_filter(f, s, mode="nearest")
    gy, gx = np.gradient(out[..., 1])
    out[..., 4] = np.hypot(gx, gy)
    out[..., 5] = np.arange(w)[None, :] / (w - 1)
    out[..., 6] = np.arange(h)[:, None] / (h - 1)
    return out


N_POOLED = 16


def pooled_features(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Shape and intensity summary fed to the landmark and plane heads."""
    h, w = mask.shape
    q = np.zeros(N_POOLED)
    f = np.asarray(frame, dtype=float)
    hh, hw = h // 2, w // 2
    q[12:16] = [f[:hh, :hw].mean(), f[:hh, hw:].mean(), f[hh:, :hw].mean(), f[hh:, hw:].mean()]
    comp, n = largest_component(mask)
    if n == 0:
        return q
    ys, xs = np.nonzero(comp)
    u = xs / (w - 1)
    v = ys / (h - 1)
    cu, cv = u.mean(), v.mean()
    su, sv = u.std(), v.std()
    top = v <= v.min() + 3.0 / (h - 1)
    q[:12] = [
        len(xs) / (h * w), cu, cv, su, sv,
        ((u - cu) * (v - cv)).mean() / max(su * sv, 1e-12),
        u.min(), u.max(), v.min(), v.max(), u[top].mean(), f[comp].mean(),
    ]
    return q


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class PixelClassifierModel:
    template: ShapeTemplate
    feat_mean: np.ndarray
    feat_std: np.ndarray
    w_pix: np.ndarray  # (2, 7)
    b_pix: np.ndarray  # (2,)
    pool_mean: np.ndarray
    pool_std: np.ndarray
    w_lmk: np.ndarray  # (6, N_POOLED)
    b_lmk: np.ndarray  # (6,)
    w_pln: np.ndarray  # (2, N_POOLED)
    b_pln: np.ndarray  # (2,)
    seed: int = 0
    space: str = "tan"  # "tan" (canonical) or "fullframe" (letterboxed)
    # letterbox-space model used on first frames; finetuning never touches it
    entry: Optional["PixelClassifierModel"] = None

    PARAMS = ("w_pix", "b_pix", "w_lmk", "b_lmk", "w_pln", "b_pln")

    def copy(self) -> "PixelClassifierModel":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        if self.entry is not None:
            kw["entry"] = self.entry.copy()
        return PixelClassifierModel(**kw)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in self.PARAMS:
            h.update(np.ascontiguousarray(getattr(self, k), dtype=np.float64).tobytes())
        return h.hexdigest()

    def check_finite(self) -> None:
        for k in self.PARAMS:
            if not np.all(np.isfinite(getattr(self, k))):
                raise AnalysisError(f"parameter {k} is not finite")

    # ---- forward pieces
    def standardized(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.feat_mean) / self.feat_std

    def pixel_logits(self, xs: np.ndarray) -> np.ndarray:
        return xs @ self.w_pix.T + self.b_pix

    def pooled(self, frame, mask) -> np.ndarray:
        # clipped so a leaky mask cannot push the linear heads far off
        z = (pooled_features(frame, mask) - self.pool_mean) / self.pool_std
        return np.clip(z, -POOL_CLIP, POOL_CLIP)

    def predict_mask(self, frame) -> np.ndarray:
        z = self.pixel_logits(self.standardized(pixel_features(frame)))
        return (z[..., 1] > z[..., 0]).astype(np.uint8)

    def analyze(self, frame, ctx: FrameContext = FrameContext()) -> AnalysisResult:
        if ctx.first_frame and self.entry is not None:
            return self.entry.analyze(frame, ctx)
        mask = self.predict_mask(frame)
        q = self.pooled(frame, mask)
        drift = self.w_lmk @ q + self.b_lmk
        lmk = self.template.landmarks.as_array() + drift.reshape(3, 2) * CANVAS
        probs = _softmax(self.w_pln @ q + self.b_pln)
        try:
            triple = LandmarkTriple.from_array(lmk)
        except TanError as e:
            raise AnalysisError(str(e)) from e
        return AnalysisResult(mask, triple, probs)

    # ---- serialization
    def to_json(self) -> dict:
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()
             if k not in ("template", "entry")}
        d["template"] = self.template.to_json()
        d["entry"] = None if self.entry is None else self.entry.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PixelClassifierModel":
        kw = {}
        for k, v in d.items():
            if k == "template":
                kw[k] = ShapeTemplate.from_json(v)
            elif k == "entry":
                kw[k] = None if v is None else cls.from_json(v)
            elif isinstance(v, list):
                kw[k] = np.asarray(v, dtype=float)
            else:
                kw[k] = v
        return cls(**kw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "PixelClassifierModel":
        return cls.from_json(json.loads(Path(path).read_text()))


PixelClassifier = PixelClassifierModel


@dataclass
class CanonicalSample:
    frame: np.ndarray  # canvas-sized
    mask: np.ndarray
    landmarks: LandmarkTriple  # canvas coordinates
    plane: str


class Adam:
    def __init__(self, params: Dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _seg_terms(model: PixelClassifierModel, xs: np.ndarray, label: np.ndarray, ohem: bool):
    """Two-class cross-entropy of the pixel head and its parameter gradients.

    With two classes only the logit margin d = z1 - z0 matters: the per-pixel
    loss is softplus(d) - y*d and d loss / d z1 = sigmoid(d) - y = -d loss / d z0.
    Returns (mean loss, dW, db, margin grid).
    """
    xs = xs.reshape(-1, N_FEATURES)
    y = np.asarray(label).ravel().astype(np.float64)
    d = xs @ (model.w_pix[1] - model.w_pix[0]) + (model.b_pix[1] - model.b_pix[0])
    loss_map = np.logaddexp(0.0, d) - y * d
    r = 1.0 / (1.0 + np.exp(-d)) - y
    if ohem:
        idx = ohem_select(loss_map, OHEM_FRACTION)
        loss = float(loss_map[idx].mean())
        g = r[idx] @ xs[idx] / len(idx)
        gb = r[idx].sum() / len(idx)
    else:
        loss = float(loss_map.mean())
        g = r @ xs / len(r)
        gb = r.sum() / len(r)
    return loss, np.stack([-g, g]), np.array([-gb, gb]), d.reshape(np.shape(label))


def _fit_heads(model: PixelClassifierModel, q: np.ndarray, samples: Sequence[CanonicalSample], steps: int, lr: float,
               weights: LossWeights) -> None:
    """Full-batch Adam on the landmark and plane heads over fixed pooled features."""
    n = len(samples)
    target = np.stack([drift_target(s.landmarks, model.template) for s in samples])
    onehot = np.eye(2)[[PLANE_INDEX[s.plane] for s in samples]]
    params = {k: getattr(model, k) for k in ("w_lmk", "b_lmk", "w_pln", "b_pln")}
    opt = Adam(params, lr)
    for _ in range(steps):
        _, g_drift = smooth_l1(q @ model.w_lmk.T + model.b_lmk - target)
        z = q @ model.w_pln.T + model.b_pln
        p = np.exp(z - z.max(axis=1, keepdims=True))
        g_logit = p / p.sum(axis=1, keepdims=True) - onehot
        opt.step(params, {
            "w_lmk": weights.lambda_lmk * g_drift.T @ q / n, "b_lmk": weights.lambda_lmk * g_drift.mean(0),
            "w_pln": weights.lambda_pln * g_logit.T @ q / n, "b_pln": weights.lambda_pln * g_logit.mean(0),
        })


def _head_terms(model: PixelClassifierModel, q: np.ndarray, sample: CanonicalSample):
    drift = model.w_lmk @ q + model.b_lmk
    l_lmk, _ = landmark_loss(drift, sample.landmarks, model.template)
    l_pln, _ = plane_loss(model.w_pln @ q + model.b_pln, sample.plane)
    return l_lmk, l_pln


def dataset_loss(model: PixelClassifierModel, samples: Sequence[CanonicalSample], weights: LossWeights = LossWeights(),
                 ohem: bool = False) -> float:
    """Mean weighted multi-task loss over ``samples``."""
    tot = 0.0
    for s in samples:
        l_seg, _, _, d = _seg_terms(model, model.standardized(pixel_features(s.frame)), s.mask, ohem)
        l_lmk, l_pln = _head_terms(model, model.pooled(s.frame, (d > 0).astype(np.uint8)), s)
        tot += combine_losses(l_pln, l_lmk, l_seg, weights)
    return tot / len(samples)


def init_model(samples: Sequence[CanonicalSample], template: ShapeTemplate, seed: int = 0, space: str = "tan") -> PixelClassifierModel:
    rng = np.random.default_rng(seed)
    stats = np.stack([pixel_features(s.frame).reshape(-1, N_FEATURES)[::7] for s in samples[:64]]).reshape(-1, N_FEATURES)
    fm, fs = stats.mean(0), stats.std(0) + 1e-6
    pooled = np.stack([pooled_features(s.frame, s.mask) for s in samples])
    pm, ps = pooled.mean(0), pooled.std(0) + 1e-6
    return PixelClassifierModel(
        template=template, feat_mean=fm, feat_std=fs,
        w_pix=rng.normal(0.0, 0.01, (2, N_FEATURES)), b_pix=np.zeros(2),
        pool_mean=pm, pool_std=ps,
        w_lmk=np.zeros((6, N_POOLED)), b_lmk=np.zeros(6),
        w_pln=np.zeros((2, N_POOLED)), b_pln=np.zeros(2),
        seed=seed, space=space,
    )


def train_pixel_classifier(samples: Sequence[CanonicalSample], template: ShapeTemplate, epochs: int = 20,
                           lr: float = 0.05, weights: LossWeights = LossWeights(), ohem: bool = False,
                           seed: int = 0, batch_size: int = 8, head_steps: int = 40, space: str = "tan",
                           model: Optional[PixelClassifierModel] = None,
                           history: Optional[List[float]] = None) -> PixelClassifierModel:
    """Mini-batch Adam on the weighted multi-task loss.

    The pixel head is updated per mini-batch from the segmentation gradient.
    The landmark and plane heads read pooled features of the predicted mask,
    which carry no gradient back into the pixel head, so they are fitted
    afterwards (``head_steps`` full-batch steps per epoch) on the final masks.
    """
    if not samples:
        raise ValueError("training set is empty")
    model = init_model(samples, template, seed, space) if model is None else model.copy()
    rng = np.random.default_rng(seed)
    # features do not depend on the parameters: standardize once
    xs = [model.standardized(pixel_features(s.frame)).reshape(-1, N_FEATURES).astype(np.float32) for s in samples]
    params = {k: getattr(model, k) for k in ("w_pix", "b_pix")}
    opt = Adam(params, lr)
    n = len(samples)
    for epoch in range(epochs):
        seg_total = 0.0
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            gw = np.zeros_like(model.w_pix)
            gb = np.zeros_like(model.b_pix)
            for i in idx:
                loss, dw, db, _ = _seg_terms(model, xs[i], samples[i].mask, ohem)
                if not np.isfinite(loss):
                    raise AnalysisError(f"non-finite segmentation loss at epoch {epoch}, sample {i}")
                seg_total += loss
                gw += dw / len(idx)
                gb += db / len(idx)
            opt.step(params, {"w_pix": weights.lambda_seg * gw, "b_pix": weights.lambda_seg * gb})
        if history is not None:
            history.append(weights.lambda_seg * seg_total / n)
        log.debug("epoch %d seg loss %.4f", epoch, seg_total / n)
    q = np.stack([model.pooled(s.frame, (_seg_terms(model, x, s.mask, False)[3] > 0).astype(np.uint8))
                  for s, x in zip(samples, xs)])
    _fit_heads(model, q, samples, head_steps * epochs, lr, weights)
    model.check_finite()
    return model


# -------------------------------------------------------- TCM finetuning


@dataclass
class FramePair:
    prev: np.ndarray  # canonical frame t-1
    label_prev: np.ndarray  # ground-truth mask of t-1
    cur: np.ndarray  # canonical frame t, same canvas transform as prev
    reference: Optional[np.ndarray] = None  # ground-truth contour of t, if known


@dataclass
class TcmStats:
    pairs: int = 0
    used: int = 0
    gated: int = 0
    skipped: int = 0
    hausdorff: List[float] = field(default_factory=list)


def tcm_labels(pair: FramePair, flow: FlowConfig = FlowConfig(), n_points: int = 20):
    """Tracked label for frame t and the contour it is gated against."""
    prev_contour = contour_from_mask(pair.label_prev)
    pts = resample_contour(prev_contour, n_points)
    prop = propagate_contour(pair.prev, pair.cur, pts, flow)
    h, w = pair.label_prev.shape
    rec = reconstruct_mask(prop.points, w, h)
    ref = pair.reference if pair.reference is not None else prev_contour
    return rec, ref


def tcm_finetune(model: PixelClassifierModel, pairs: Sequence[FramePair], flow: FlowConfig = FlowConfig(),
                 gate: HetGateConfig = HetGateConfig(), lr: float = 0.2, epochs: int = 1, ohem: bool = True,
                 distance: Callable = hausdorff, stats: Optional[TcmStats] = None,
                 seed: int = 0) -> PixelClassifierModel:
    """Dual-path finetuning of the pixel head.

    Path 1 scores frame t-1 against its annotation, path 2 scores frame t
    against the LK-propagated label (OHEM-restricted). Both paths read the same
    parameters; a pair whose tracked contour is farther than the gate threshold
    from the reference contributes nothing.
    """
    model = model.copy()
    stats = stats if stats is not None else TcmStats()
    labels = []
    for pair in pairs:
        try:
            rec, ref = tcm_labels(pair, flow)
        except (PropagationError, TanError) as e:
            log.info("skipping pair: %s", e)
            labels.append(None)
            continue
        labels.append((rec.mask, float(distance(ref, rec.contour))))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for i in rng.permutation(len(pairs)):
            stats.pairs += 1
            if labels[i] is None:
                stats.skipped += 1
                continue
            of_mask, haus = labels[i]
            stats.hausdorff.append(haus)
            if not gate_open(haus, gate):
                stats.gated += 1
                continue
            pair = pairs[i]
            before = model.checksum()
            l_m, gw1, gb1, _ = _seg_terms(model, model.standardized(pixel_features(pair.prev)), pair.label_prev, False)
            if model.checksum() != before:
                raise AnalysisError("paths saw different parameters")
            l_of, gw2, gb2, _ = _seg_terms(model, model.standardized(pixel_features(pair.cur)), of_mask, ohem)
            if not np.isfinite(l_m + l_of):
                raise AnalysisError("non-finite loss during TCM finetuning")
            model.w_pix -= lr * (gw1 + gw2)
            model.b_pix -= lr * (gb1 + gb2)
            stats.used += 1
    model.check_finite()
    return model
