"""Frame-by-frame affine-normalized analysis loop, evaluation and benchmarking."""

from __future__ import annotations

import json
import logging
import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .analyzer import AnalysisError, Analyzer, FrameContext, OracleAnalyzer, OracleConfig, PixelClassifierModel, analyze
from .data import AnnotationSet, DegenerateError, LandmarkTriple, SplitMaskWarning, TanError, VideoSequence, contour_from_mask
from .flow import FlowConfig, PropagationError, build_pyramid, propagate_contour, resample_contour
from .geometry import CANVAS, AffineTransform, ShapeTemplate, build_template, estimate_affine, letterbox, map_triple
from .losses import HetGateConfig, LossWeights
from .metrics import FrameMetrics, SequenceEval, asd, dice, oks, smoothness_index
from .warping import WarpSpec, warp_image, warp_mask

log = logging.getLogger(__name__)


class PipelineError(TanError):
    pass


@dataclass
class PipelineConfig:
    template: Optional[str] = None
    analyzer: str = "oracle"  # "oracle" or a model JSON path
    oracle: OracleConfig = OracleConfig()
    flow: FlowConfig = FlowConfig()
    gate: HetGateConfig = HetGateConfig()
    loss: LossWeights = LossWeights()
    first_frame: str = "letterbox"
    mode: str = "tan"  # "tan" or "fullframe" (every frame letterboxed)
    workers: int = 1
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("tan", "fullframe"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.first_frame != "letterbox":
            raise ValueError(f"unknown first-frame policy {self.first_frame!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kw = {}
        if "flow" in d:
            kw["flow"] = FlowConfig.from_dict(d.pop("flow"))
        if "loss" in d:
            l = d.pop("loss")
            kw["loss"] = LossWeights(**{k: l[k] for k in ("lambda_pln", "lambda_lmk", "lambda_seg") if k in l})
            if "haus_threshold" in l:
                kw["gate"] = HetGateConfig(float(l["haus_threshold"]))
        if "oracle" in d:
            kw["oracle"] = OracleConfig(**d.pop("oracle"))
        for k in ("template", "analyzer", "first_frame", "mode", "workers", "output_dir"):
            if k in d:
                kw[k] = d.pop(k)
        if d:
            raise ValueError(f"unknown pipeline config keys: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        cfg = cls.from_dict(json.loads(path.read_text()))
        # referenced files are relative to the config file
        for k in ("template", "analyzer"):
            v = getattr(cfg, k)
            if v and v != "oracle" and not Path(v).is_absolute():
                setattr(cfg, k, str(path.parent / v))
        for k in ("template", "analyzer"):
            v = getattr(cfg, k)
            if v and v != "oracle" and not Path(v).exists():
                raise PipelineError(f"{k} file {v} does not exist")
        return cfg


@dataclass
class FrameResult:
    frame_id: int
    mask_full: np.ndarray
    landmarks_full: LandmarkTriple
    plane_probs: np.ndarray
    transform: AffineTransform
    timings_us: Dict[str, float] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    canonical: Optional[np.ndarray] = None

    @property
    def plane(self) -> str:
        return ("A2C", "A4C")[int(np.argmax(self.plane_probs))]


def resolve_analyzer(cfg: PipelineConfig, annotations: Optional[AnnotationSet] = None):
    """Build the analyzer and the template the loop warps onto."""
    if cfg.analyzer == "oracle":
        if annotations is None:
            raise PipelineError("the oracle analyzer needs ground-truth annotations")
        analyzer = OracleAnalyzer(annotations, cfg.oracle)
        if cfg.template:
            template = ShapeTemplate.load(cfg.template)
        else:
            lm = [a.landmarks for a in annotations.frames.values() if a.landmarks is not None]
            dims = [a.mask.shape[::-1] for a in annotations.frames.values() if a.landmarks is not None and a.mask is not None]
            if len(dims) != len(lm):
                raise PipelineError("template from annotations needs masks for frame dimensions")
            template = build_template(lm, dims)
        return analyzer, template
    model = PixelClassifierModel.load(cfg.analyzer)
    template = ShapeTemplate.load(cfg.template) if cfg.template else model.template
    return model, template


def _us(t0: int) -> float:
    return (time.perf_counter_ns() - t0) / 1000.0


def _analyze_through(frame, transform, analyzer, frame_id, out_dims, workers, first=False):
    t0 = time.perf_counter_ns()
    canon = warp_image(frame, WarpSpec(transform, (CANVAS, CANVAS)), workers)
    t_warp = _us(t0)
    t0 = time.perf_counter_ns()
    res = analyze(canon, analyzer, FrameContext(frame_id, transform, first))
    t_an = _us(t0)
    t0 = time.perf_counter_ns()
    inv = transform.inverse()
    mask_full = warp_mask(res.mask, WarpSpec(inv, out_dims), workers)
    lmk_full = map_triple(inv, res.landmarks)
    t_inv = _us(t0)
    return canon, res, mask_full, lmk_full, {"warp": t_warp, "analyze": t_an, "inverse": t_inv}


def run_tan(seq: VideoSequence, analyzer: Analyzer, template: ShapeTemplate, cfg: PipelineConfig = PipelineConfig(),
            keep_canonical: bool = False) -> List[FrameResult]:
    """Analyze a sequence frame by frame.

    Frame 0 (and every frame in ``fullframe`` mode) is letterboxed onto the
    canvas. Later frames are warped with the affine map taking the previous
    output landmarks onto the template; outputs are mapped back through its
    inverse. A degenerate triple or failed analysis reuses the previous result.
    """
    if len(seq) == 0:
        raise PipelineError("empty sequence")
    h, w = seq.shape
    box = letterbox(w, h)
    results: List[FrameResult] = []
    prev_lmk: Optional[LandmarkTriple] = None
    for k, (fid, frame) in enumerate(zip(seq.frame_ids, seq.frames)):
        t_start = time.perf_counter_ns()
        flags = []
        if k == 0 or cfg.mode == "fullframe":
            transform = box
            if k == 0:
                flags.append("first_frame")
        else:
            try:
                transform = estimate_affine(prev_lmk, template.landmarks)
                if abs(transform.det) <= 1e-12:
                    transform = None
            except DegenerateError:
                transform = None
        if transform is None:
            results.append(_reuse(results[-1], fid, flags + ["degenerate_landmarks"], t_start))
            continue
        try:
            canon, res, mask_full, lmk_full, timings = _analyze_through(frame, transform, analyzer, fid, (w, h), cfg.workers, k == 0)
        except (AnalysisError, DegenerateError) as e:
            if k == 0:
                raise PipelineError(f"first frame analysis failed: {e}") from e
            results.append(_reuse(results[-1], fid, flags + ["analysis_failed"], t_start))
            continue
        timings["total"] = _us(t_start)
        r = FrameResult(fid, mask_full, lmk_full, np.asarray(res.plane_probs, dtype=float), transform, timings, flags)
        if keep_canonical:
            r.canonical = canon
        results.append(r)
        # closed loop: these exact landmarks drive the next frame's transform
        prev_lmk = r.landmarks_full
    return results


def _reuse(prev: FrameResult, fid: int, flags: List[str], t_start: int) -> FrameResult:
    return FrameResult(fid, prev.mask_full.copy(), prev.landmarks_full, prev.plane_probs.copy(), prev.transform,
                       {"warp": 0.0, "analyze": 0.0, "inverse": 0.0, "total": _us(t_start)}, flags)


# -------------------------------------------------------------- evaluation


def safe_contour(mask: np.ndarray) -> Optional[np.ndarray]:
    import warnings
    if not np.any(mask):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SplitMaskWarning)
        return contour_from_mask(mask)


def evaluate(results: Sequence[FrameResult], gt: AnnotationSet) -> SequenceEval:
    """Per-frame Dice / ASD / OKS / plane label plus the sequence SI."""
    common = [r for r in results if r.frame_id in gt.frames and gt.frames[r.frame_id].mask is not None]
    if not common:
        raise PipelineError("no frame shared between results and ground truth")
    ev = SequenceEval(coverage=len(common) / max(len(results), 1))
    pred_contours, gt_contours = [], []
    for r in common:
        ann = gt.frames[r.frame_id]
        pc = safe_contour(r.mask_full)
        gc = safe_contour(ann.mask)
        d_asd = asd(pc, gc) if pc is not None and gc is not None else float("inf")
        o = None
        if ann.landmarks is not None and ann.mask.sum() > 0:
            o = oks(r.landmarks_full, ann.landmarks, float(ann.mask.sum()))
        ev.frames.append(FrameMetrics(r.frame_id, dice(r.mask_full, ann.mask), d_asd, o, r.plane, gt.plane_of(r.frame_id)))
        pred_contours.append(pc)
        gt_contours.append(gc)
    if len(common) >= 2:
        if all(c is not None for c in pred_contours):
            ev.si = smoothness_index([pred_contours])
        if all(c is not None for c in gt_contours):
            ev.si_gt = smoothness_index([gt_contours])
    return ev


def results_to_json(results: Sequence[FrameResult], sequence: str = "", ev: Optional[SequenceEval] = None) -> dict:
    metrics = {f.frame_id: f for f in ev.frames} if ev else {}
    frames = []
    for r in results:
        e = {"id": r.frame_id, "landmarks": r.landmarks_full.to_json(),
             "plane_probs": r.plane_probs.tolist(), "transform": r.transform.to_json(),
             "timings_us": r.timings_us, "flags": r.flags,
             "mask_rle": rle_encode(r.mask_full)}
        if r.frame_id in metrics:
            m = metrics[r.frame_id]
            e["metrics"] = {"dice": m.dice, "asd": m.asd, "oks": m.oks}
        frames.append(e)
    h, w = results[0].mask_full.shape
    plane = results[0].plane if results else None
    return {"sequence": sequence, "plane": plane, "dims": [w, h], "frames": frames}


def rle_encode(mask: np.ndarray) -> List[int]:
    """Row-major run lengths starting with a run of zeros."""
    flat = (np.asarray(mask).ravel() > 0).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return runs


def rle_decode(runs: Sequence[int], w: int, h: int) -> np.ndarray:
    vals = np.arange(len(runs)) % 2
    return np.repeat(vals, runs).astype(np.uint8).reshape(h, w)


def results_from_json(doc: dict) -> List[FrameResult]:
    w, h = doc["dims"]
    out = []
    for e in doc["frames"]:
        out.append(FrameResult(e["id"], rle_decode(e["mask_rle"], w, h), LandmarkTriple.from_json(e["landmarks"]),
                               np.asarray(e["plane_probs"], dtype=float), AffineTransform(np.asarray(e["transform"])),
                               e.get("timings_us", {}), e.get("flags", [])))
    return out


# ---------------------------------------------------------------- benchmark


def machine_descriptor() -> str:
    return f"{platform.machine()} {platform.processor() or platform.platform()} cpus={os.cpu_count()} python={platform.python_version()} numpy={np.__version__}"


def _timed_pass(seq, analyzer, template, cfg, flow_points: int):
    results = run_tan(seq, analyzer, template, cfg, keep_canonical=True)
    flow_us = [0.0]
    for k in range(1, len(results)):
        t0 = time.perf_counter_ns()
        prev = results[k - 1]
        contour = safe_contour(prev.mask_full)
        if contour is not None:
            canon_contour = prev.transform.apply(contour)
            pts = resample_contour(canon_contour, flow_points)
            try:
                propagate_contour(prev.canonical, results[k].canonical, pts, cfg.flow)
            except PropagationError:
                pass
        flow_us.append(_us(t0))
    return results, flow_us


def bench(seq: VideoSequence, analyzer: Analyzer, template: ShapeTemplate, cfg: PipelineConfig = PipelineConfig(),
          repeats: int = 3, threads: Optional[int] = None, flow_points: int = 20) -> dict:
    """Median throughput of warp + analyze + inverse + contour propagation,
    single- and multi-threaded; asserts both runs give identical outputs."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    threads = threads or max(2, os.cpu_count() or 1)
    report = {"machine": machine_descriptor(), "frames": len(seq), "repeats": repeats, "runs": {}}
    reference = None
    for label, workers in (("single_thread", 1), ("multi_thread", threads)):
        run_cfg = PipelineConfig(**{**cfg.__dict__, "workers": workers})
        per_frame = {"warp": [], "analyze": [], "inverse": [], "flow": [], "total": []}
        for _ in range(repeats):
            results, flow_us = _timed_pass(seq, analyzer, template, run_cfg, flow_points)
            outputs = [(r.mask_full.tobytes(), r.landmarks_full.as_array().tobytes()) for r in results]
            if reference is None:
                reference = outputs
            elif outputs != reference:
                raise PipelineError("benchmark outputs differ between runs")
            for r, f_us in zip(results, flow_us):
                for k in ("warp", "analyze", "inverse"):
                    per_frame[k].append(r.timings_us.get(k, 0.0))
                per_frame["flow"].append(f_us)
                per_frame["total"].append(r.timings_us.get("total", 0.0) + f_us)
        med = {k: statistics.median(v) for k, v in per_frame.items()}
        report["runs"][label] = {
            "workers": workers,
            "median_us": med,
            "fps": 1e6 / med["total"] if med["total"] > 0 else float("inf"),
            "stage_fps": {k: (1e6 / v if v > 0 else float("inf")) for k, v in med.items()},
        }
    return report
