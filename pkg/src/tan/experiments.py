"""Desk-scale experiments on synthetic data: dataset assembly, the
canonical-vs-letterboxed comparison and the temporal-coherence finetuning run.
Used by ``scripts/`` and by the acceptance tests."""

from __future__ import annotations

import logging
import time
from pathlib import Path
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analyzer import CanonicalSample, FramePair, PixelClassifierModel, TcmStats, tcm_finetune, train_pixel_classifier
from .data import (AnnotationSet, LandmarkTriple, LoadError, VideoSequence, contour_from_mask, load_annotations,
                   load_sequence, save_annotations, save_sequence)
from .flow import FlowConfig
from .geometry import CANVAS, ShapeTemplate, build_template, estimate_affine, letterbox, map_triple
from .losses import HetGateConfig
from .metrics import SequenceEval, aggregate
from .pipeline import PipelineConfig, evaluate, run_tan
from .synth import AugConfig, generate_sequence, random_config, sample_augmentation
from .warping import WarpSpec, warp_image, warp_mask

log = logging.getLogger(__name__)

Video = Tuple[VideoSequence, AnnotationSet]


def make_videos(n: int, seed: int, n_frames: int = 16, **overrides) -> List[Video]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        cfg = random_config(rng, n_frames=n_frames, **overrides)
        out.append(generate_sequence(cfg, name=f"synth_{seed}_{k:03d}"))
    return out


ANNOTATION_FILE = "annotations.json"


def save_videos(videos: Sequence[Video], root) -> List[Path]:
    """One sub-directory per sequence: frames plus ``annotations.json``."""
    root = Path(root)
    out = []
    for seq, ann in videos:
        d = root / ann.sequence
        save_sequence(seq, d)
        save_annotations(ann, d / ANNOTATION_FILE)
        out.append(d)
    return out


def load_videos(root) -> List[Video]:
    root = Path(root)
    dirs = sorted(p.parent for p in root.glob(f"*/{ANNOTATION_FILE}"))
    if (root / ANNOTATION_FILE).exists():
        dirs.insert(0, root)
    if not dirs:
        raise LoadError(f"{root}: no annotated sequences")
    out = []
    for d in dirs:
        seq = load_sequence(d)
        out.append((seq, load_annotations(d / ANNOTATION_FILE, seq.frame_ids)))
    return out


def tan_template(videos: Sequence[Video]) -> ShapeTemplate:
    lm, dims = [], []
    for seq, ann in videos:
        h, w = seq.shape
        for a in ann.frames.values():
            lm.append(a.landmarks)
            dims.append((w, h))
    return build_template(lm, dims)


def fullframe_template(videos: Sequence[Video]) -> ShapeTemplate:
    """Mean landmark triple after letterboxing; the drift origin of a
    letterbox-space model."""
    acc = []
    for seq, ann in videos:
        h, w = seq.shape
        box = letterbox(w, h)
        acc.extend(box.apply(a.landmarks.as_array()) for a in ann.frames.values())
    return ShapeTemplate(LandmarkTriple.from_array(np.mean(acc, axis=0)))


def canonical_samples(videos: Sequence[Video], template: ShapeTemplate, space: str = "tan",
                      frames_per_video: int = 6, aug: Optional[AugConfig] = AugConfig(),
                      seed: int = 0) -> List[CanonicalSample]:
    """Warp annotated frames onto the canvas (by their own landmarks in ``tan``
    space, by letterboxing in ``fullframe`` space) with a random augmentation."""
    rng = np.random.default_rng(seed)
    out = []
    for seq, ann in videos:
        h, w = seq.shape
        ids = list(ann.frames)
        pick = sorted(rng.choice(len(ids), size=min(frames_per_video, len(ids)), replace=False))
        for j in pick:
            fid = ids[j]
            a = ann.frames[fid]
            base = estimate_affine(a.landmarks, template.landmarks) if space == "tan" else letterbox(w, h)
            t = base
            if aug is not None:
                jitter, _ = sample_augmentation(aug, rng, ((CANVAS - 1) / 2.0, (CANVAS - 1) / 2.0))
                t = jitter.compose(base)
            spec = WarpSpec(t, (CANVAS, CANVAS))
            frame = warp_image(seq.frames[seq.frame_ids.index(fid)], spec)
            mask = warp_mask(a.mask, spec)
            out.append(CanonicalSample(frame, mask, map_triple(t, a.landmarks), ann.plane_of(fid)))
    return out


def train_model(videos: Sequence[Video], space: str, epochs: int = 25, lr: float = 0.05, ohem: bool = False,
                seed: int = 0, frames_per_video: int = 6, template: Optional[ShapeTemplate] = None,
                entry: Optional[PixelClassifierModel] = None) -> PixelClassifierModel:
    """Train in ``space``. A canonical model gets a letterbox-space entry model
    for first frames (trained here unless given)."""
    if template is None:
        template = tan_template(videos) if space == "tan" else fullframe_template(videos)
    samples = canonical_samples(videos, template, space, frames_per_video, seed=seed)
    model = train_pixel_classifier(samples, template, epochs=epochs, lr=lr, ohem=ohem, seed=seed, space=space)
    if space == "tan":
        model.entry = entry if entry is not None else train_model(videos, "fullframe", epochs, lr, ohem, seed, frames_per_video)
    return model


def evaluate_model(model, template: ShapeTemplate, videos: Sequence[Video], mode: str) -> Tuple[List[SequenceEval], Dict]:
    cfg = PipelineConfig(mode=mode)
    evals = [evaluate(run_tan(seq, model, template, cfg), ann) for seq, ann in videos]
    return evals, aggregate(evals)


@dataclass
class Comparison:
    fullframe: Dict
    tan: Dict
    seconds: float

    @property
    def dice_gain(self) -> float:
        return 100.0 * (self.tan["dice_mean"] - self.fullframe["dice_mean"])


def compare_tan_fullframe(n_train: int = 40, n_test: int = 20, n_frames: int = 16, seed: int = 7,
                          epochs: int = 25) -> Comparison:
    """Same classifier, trained and run letterboxed vs in the canonical space."""
    t0 = time.perf_counter()
    train = make_videos(n_train, seed, n_frames)
    test = make_videos(n_test, seed + 1000, n_frames)
    ff_model = train_model(train, "fullframe", epochs=epochs, seed=seed)
    tan_model = train_model(train, "tan", epochs=epochs, seed=seed, entry=ff_model)
    _, ff = evaluate_model(ff_model, ff_model.template, test, "fullframe")
    _, tn = evaluate_model(tan_model, tan_model.template, test, "tan")
    return Comparison(ff, tn, time.perf_counter() - t0)


def tcm_pairs(videos: Sequence[Video], template: ShapeTemplate, with_reference: bool = True) -> List[FramePair]:
    """Consecutive frames warped by the earlier frame's landmarks, as at inference."""
    pairs = []
    for seq, ann in videos:
        for k in range(1, len(seq)):
            a0 = ann.frames.get(seq.frame_ids[k - 1])
            a1 = ann.frames.get(seq.frame_ids[k])
            if a0 is None or a0.mask is None or a0.landmarks is None:
                continue
            spec = WarpSpec(estimate_affine(a0.landmarks, template.landmarks), (CANVAS, CANVAS))
            ref = None
            if with_reference and a1 is not None and a1.mask is not None and a1.mask.any():
                ref = contour_from_mask(warp_mask(a1.mask, spec))
            pairs.append(FramePair(warp_image(seq.frames[k - 1], spec), warp_mask(a0.mask, spec),
                                   warp_image(seq.frames[k], spec), ref))
    return pairs


@dataclass
class TcmRun:
    before: Dict
    after: Dict
    stats: TcmStats
    seconds: float

    @property
    def si_reduction(self) -> float:
        return 1.0 - self.after["si"] / self.before["si"]

    @property
    def dice_drop(self) -> float:
        return 100.0 * (self.before["dice_mean"] - self.after["dice_mean"])


def tcm_experiment(n_train: int = 40, n_test: int = 20, n_frames: int = 16, seed: int = 11, epochs: int = 25,
                   tcm_epochs: int = 1, tcm_lr: float = 0.2, flow: FlowConfig = FlowConfig(),
                   gate: HetGateConfig = HetGateConfig()) -> TcmRun:
    t0 = time.perf_counter()
    train = make_videos(n_train, seed, n_frames)
    test = make_videos(n_test, seed + 1000, n_frames)
    model = train_model(train, "tan", epochs=epochs, seed=seed)
    _, before = evaluate_model(model, model.template, test, "tan")
    stats = TcmStats()
    tuned = tcm_finetune(model, tcm_pairs(train, model.template), flow, gate, lr=tcm_lr, epochs=tcm_epochs,
                         stats=stats, seed=seed)
    _, after = evaluate_model(tuned, tuned.template, test, "tan")
    return TcmRun(before, after, stats, time.perf_counter() - t0)
