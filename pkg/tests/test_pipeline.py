import json

import numpy as np
import pytest

from tan.analyzer import AnalysisError, AnalysisResult, OracleAnalyzer, OracleConfig
from tan.data import AnnotationSet, FrameAnnotation, LandmarkTriple, VideoSequence
from tan.experiments import tan_template
from tan.geometry import CANVAS
from tan.metrics import dice
from tan.pipeline import (PipelineConfig, PipelineError, bench, evaluate, resolve_analyzer, results_from_json,
                          results_to_json, rle_decode, rle_encode, run_tan)
from tan.synth import SynthConfig, generate_sequence


def oracle_run(video, **cfg):
    seq, ann = video
    analyzer, tmpl = resolve_analyzer(PipelineConfig(), ann)
    return run_tan(seq, OracleAnalyzer(ann, OracleConfig(**cfg)) if cfg else analyzer, tmpl)


class TestRun:
    def test_single_canvas_frame_is_exact(self):
        seq, ann = generate_sequence(SynthConfig(dims=(224, 224), n_frames=1, half_width=22, length=75, seed=2))
        (r,) = oracle_run((seq, ann))
        np.testing.assert_array_equal(r.mask_full, ann.frames[0].mask)
        np.testing.assert_allclose(r.landmarks_full.as_array(), ann.frames[0].landmarks.as_array(), atol=1e-9)
        assert r.flags == ["first_frame"]

    def test_static_sequence(self):
        seq, ann = generate_sequence(SynthConfig(n_frames=10, amplitude=0.0, valve_flap=False, seed=4))
        res = oracle_run((seq, ann))
        for r in res[2:]:
            np.testing.assert_array_equal(r.mask_full, res[1].mask_full)
        ev = evaluate(res[1:], ann)
        assert ev.si == pytest.approx(0.0, abs=1e-12)

    def test_oracle_tracks_moving_lv(self, default_video):
        ev = evaluate(oracle_run(default_video), default_video[1])
        assert min(f.dice for f in ev.frames) >= 0.97
        assert all(f.plane_pred == f.plane_gt for f in ev.frames)
        assert ev.si == pytest.approx(ev.si_gt, rel=0.1)

    def test_mask_noise_costs_dice(self, default_video):
        ev = evaluate(oracle_run(default_video, mask_noise=1), default_video[1])
        d = [f.dice for f in ev.frames]
        assert 0.9 < np.mean(d) < 0.99

    def test_fullframe_mode_letterboxes_every_frame(self, default_video):
        seq, ann = default_video
        analyzer, tmpl = resolve_analyzer(PipelineConfig(), ann)
        res = run_tan(seq, analyzer, tmpl, PipelineConfig(mode="fullframe"))
        assert all(np.array_equal(r.transform.m, res[0].transform.m) for r in res)

    def test_failed_analysis_reuses_previous(self, default_video):
        seq, ann = default_video

        class Flaky(OracleAnalyzer):
            def analyze(self, frame, ctx):
                if ctx.frame_id == 3:
                    raise AnalysisError("boom")
                return super().analyze(frame, ctx)
        analyzer, tmpl = resolve_analyzer(PipelineConfig(), ann)
        res = run_tan(seq, Flaky(ann), tmpl)
        assert "analysis_failed" in res[3].flags
        np.testing.assert_array_equal(res[3].mask_full, res[2].mask_full)
        assert "analysis_failed" not in res[4].flags

    def test_degenerate_landmarks_reuse(self, default_video):
        seq, ann = default_video

        class Collapsing:
            def analyze(self, frame, ctx):
                p = (10.0, 10.0)
                return AnalysisResult(np.zeros((CANVAS, CANVAS), np.uint8), LandmarkTriple(p, (20.0, 10.0), (30.0, 10.0000001)),
                                      np.array([0.5, 0.5]))
        tmpl = tan_template([default_video])
        res = run_tan(seq, Collapsing(), tmpl)
        assert all("degenerate_landmarks" in r.flags for r in res[1:])

    def test_first_frame_failure_is_fatal(self, default_video):
        seq, ann = default_video
        empty = AnnotationSet(ann.sequence, ann.plane, {})
        analyzer, tmpl = resolve_analyzer(PipelineConfig(), ann)
        with pytest.raises(PipelineError):
            run_tan(seq, OracleAnalyzer(empty), tmpl)

    def test_empty_sequence(self, default_video):
        with pytest.raises(Exception):
            run_tan(VideoSequence([], []), None, tan_template([default_video]))


class TestEvaluate:
    def test_empty_intersection(self, default_video):
        seq, ann = default_video
        res = oracle_run(default_video)
        other = AnnotationSet(ann.sequence, ann.plane, {999: ann.frames[0]})
        with pytest.raises(PipelineError):
            evaluate(res, other)

    def test_partial_coverage(self, default_video):
        seq, ann = default_video
        half = AnnotationSet(ann.sequence, ann.plane, {k: v for k, v in ann.frames.items() if k % 2 == 0})
        ev = evaluate(oracle_run(default_video), half)
        assert ev.coverage == pytest.approx(0.5) and len(ev.frames) == 5


class TestSerialization:
    @pytest.mark.parametrize("bits", [[0, 0, 1, 1, 1, 0], [1, 1, 0], [1], [0], [1, 0, 1, 0, 1]])
    def test_rle_round_trip(self, bits):
        m = np.array(bits, np.uint8).reshape(1, -1)
        runs = rle_encode(m)
        assert sum(runs) == m.size
        np.testing.assert_array_equal(rle_decode(runs, m.size, 1), m)

    def test_rle_starts_with_zero_run(self):
        assert rle_encode(np.array([[1, 1, 0]]))[0] == 0

    def test_results_round_trip(self, default_video):
        seq, ann = default_video
        res = oracle_run(default_video)
        doc = json.loads(json.dumps(results_to_json(res, ann.sequence, evaluate(res, ann))))
        back = results_from_json(doc)
        assert doc["frames"][0]["metrics"]["dice"] >= 0.97
        for a, b in zip(res, back):
            np.testing.assert_array_equal(a.mask_full, b.mask_full)
            np.testing.assert_array_equal(a.landmarks_full.as_array(), b.landmarks_full.as_array())
            np.testing.assert_array_equal(a.transform.m, b.transform.m)


class TestConfig:
    def test_load_relative_paths(self, tmp_path, default_video):
        tan_template([default_video]).save(tmp_path / "tmpl.json")
        (tmp_path / "cfg.json").write_text(json.dumps({"template": "tmpl.json", "flow": {"levels": 2},
                                                      "loss": {"haus_threshold": 15}, "workers": 2}))
        cfg = PipelineConfig.load(tmp_path / "cfg.json")
        assert cfg.template == str(tmp_path / "tmpl.json")
        assert cfg.flow.pyramid_levels == 2 and cfg.gate.hausdorff_threshold == 15.0 and cfg.workers == 2

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            PipelineConfig.from_dict({"nonsense": 1})

    def test_missing_file(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"analyzer": "missing.json"}))
        with pytest.raises(PipelineError):
            PipelineConfig.load(tmp_path / "cfg.json")

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            PipelineConfig(mode="sideways")

    def test_oracle_needs_annotations(self):
        with pytest.raises(PipelineError):
            resolve_analyzer(PipelineConfig())


class TestBench:
    def test_report(self, small_video):
        seq, ann = small_video
        analyzer, tmpl = resolve_analyzer(PipelineConfig(), ann)
        rep = bench(seq, analyzer, tmpl, repeats=3, threads=2)
        for run in rep["runs"].values():
            med = run["median_us"]
            assert set(med) == {"warp", "analyze", "inverse", "flow", "total"}
            assert run["fps"] > 0
            assert med["warp"] + med["analyze"] + med["inverse"] <= med["total"] * 1.5 + 1
        assert rep["frames"] == len(seq)

    def test_needs_three_repeats(self, small_video):
        seq, ann = small_video
        analyzer, tmpl = resolve_analyzer(PipelineConfig(), ann)
        with pytest.raises(ValueError):
            bench(seq, analyzer, tmpl, repeats=2)
