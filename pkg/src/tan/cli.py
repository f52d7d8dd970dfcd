"""Command-line entry point: ``tan <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analyzer import PixelClassifierModel, TcmStats, tcm_finetune
from .data import TanError, load_annotations, load_sequence
from .experiments import load_videos, save_videos, tcm_pairs, train_model
from .pipeline import (PipelineConfig, bench, evaluate, resolve_analyzer, results_from_json, results_to_json,
                       run_tan)
from .synth import SynthConfig, generate_sequence, random_config

log = logging.getLogger("tan")


def _write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise TanError(f"{path}: {e}") from e


def cmd_synth(args) -> dict:
    base = _read_json(args.config) if args.config else {}
    if args.count == 1 and not args.randomize:
        videos = [generate_sequence(SynthConfig.from_dict(base), name=f"synth_{base.get('seed', 0)}")]
    else:
        rng = np.random.default_rng(base.get("seed", 0))
        overrides = {k: v for k, v in base.items() if k != "seed"}
        if "dims" in overrides:
            overrides["dims"] = tuple(overrides["dims"])
        videos = []
        for k in range(args.count):
            cfg = random_config(rng, **overrides) if args.randomize else SynthConfig.from_dict({**base, "seed": base.get("seed", 0) + k})
            videos.append(generate_sequence(cfg, name=f"seq_{k:03d}"))
    dirs = save_videos(videos, args.out)
    return {"sequences": [str(d) for d in dirs]}


def _sequence_and_annotations(seq_dir, ann_path):
    seq = load_sequence(seq_dir)
    ann = None
    if ann_path:
        ann = load_annotations(ann_path, seq.frame_ids)
    elif (Path(seq_dir) / "annotations.json").exists():
        ann = load_annotations(Path(seq_dir) / "annotations.json", seq.frame_ids)
    return seq, ann


def cmd_run(args) -> dict:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    seq, ann = _sequence_and_annotations(args.seq, args.ann)
    analyzer, template = resolve_analyzer(cfg, ann)
    results = run_tan(seq, analyzer, template, cfg)
    ev = evaluate(results, ann) if ann is not None and any(a.mask is not None for a in ann.frames.values()) else None
    doc = results_to_json(results, sequence=Path(args.seq).name, ev=ev)
    _write_json(args.out, doc)
    return {"frames": len(results), "out": args.out}


def _overlay(frame, pred, gt):
    from PIL import Image
    from scipy import ndimage

    def edge(m):
        m = m > 0
        return m & ~ndimage.binary_erosion(m)

    rgb = np.repeat((np.clip(frame, 0, 1) * 255).astype(np.uint8)[..., None], 3, axis=2)
    if gt is not None:
        rgb[edge(gt)] = (0, 255, 0)
    rgb[edge(pred)] = (255, 0, 0)
    return Image.fromarray(rgb)


def cmd_eval(args) -> dict:
    results = results_from_json(_read_json(args.results))
    ann = load_annotations(args.ann)
    ev = evaluate(results, ann)
    doc = ev.to_json()
    _write_json(args.out, doc)
    if args.overlays:
        if not args.seq:
            raise TanError("--overlays needs --seq")
        seq = load_sequence(args.seq)
        out = Path(args.overlays)
        out.mkdir(parents=True, exist_ok=True)
        frames = dict(zip(seq.frame_ids, seq.frames))
        for r in results:
            if r.frame_id in frames:
                gt = ann.frames.get(r.frame_id)
                _overlay(frames[r.frame_id], r.mask_full, None if gt is None else gt.mask).save(out / f"overlay_{r.frame_id:05d}.png")
    return doc["aggregates"]


def cmd_train(args) -> dict:
    videos = load_videos(args.data)
    model = train_model(videos, args.space, epochs=args.epochs, lr=args.lr, ohem=args.ohem, seed=args.seed,
                        frames_per_video=args.frames_per_video)
    model.save(args.out)
    return {"samples_per_video": args.frames_per_video, "videos": len(videos), "space": args.space, "out": args.out}


def cmd_tcm(args) -> dict:
    model = PixelClassifierModel.load(args.model)
    videos = load_videos(args.data)
    stats = TcmStats()
    tuned = tcm_finetune(model, tcm_pairs(videos, model.template), lr=args.lr, epochs=args.epochs,
                         ohem=not args.no_ohem, stats=stats, seed=args.seed)
    tuned.save(args.out)
    return {"pairs": stats.pairs, "used": stats.used, "gated": stats.gated, "skipped": stats.skipped, "out": args.out}


def cmd_bench(args) -> dict:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    seq, ann = _sequence_and_annotations(args.seq, args.ann)
    analyzer, template = resolve_analyzer(cfg, ann)
    report = bench(seq, analyzer, template, cfg, repeats=args.repeats, threads=args.threads)
    _write_json(args.out, report)
    return {k: v["fps"] for k, v in report["runs"].items()}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tan", description="Affine-normalized LV video analysis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render synthetic sequences with ground truth")
    s.add_argument("--config", help="SynthConfig JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--randomize", action="store_true", help="vary pose, size, phase and plane per sequence")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="analyze one sequence")
    s.add_argument("--seq", required=True)
    s.add_argument("--ann")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score results against annotations")
    s.add_argument("--results", required=True)
    s.add_argument("--ann", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--overlays", help="directory for PNG overlays")
    s.add_argument("--seq", help="sequence directory (for overlays)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("train", help="train the pixel classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=25)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--ohem", action="store_true")
    s.add_argument("--space", choices=("tan", "fullframe"), default="tan")
    s.add_argument("--frames-per-video", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tcm-finetune", help="dual-path finetuning with tracked labels")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--lr", type=float, default=0.2)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--no-ohem", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tcm)

    s = sub.add_parser("bench", help="throughput benchmark")
    s.add_argument("--seq", required=True)
    s.add_argument("--ann")
    s.add_argument("--config")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--threads", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except (TanError, ValueError, OSError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}) + "\n")
        return 2
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
