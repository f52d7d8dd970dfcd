import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tan.data import (DEGENERACY_THRESHOLD, AnnotationSet, DegenerateError, FrameAnnotation, LandmarkTriple,
                      LoadError, SchemaError, VideoSequence, contour_from_mask, largest_component, load_annotations,
                      load_sequence, mask_from_contour, normalized_triangle_area, polygon_area, read_gray,
                      save_annotations, save_sequence, write_gray)
from tan.metrics import dice

from conftest import star_polygon


def brute_inside(poly, w, h):
    """Even-odd ray casting per pixel center; centers on an edge count as inside."""
    poly = np.asarray(poly, float)
    out = np.zeros((h, w), np.uint8)
    n = len(poly)
    for i in range(h):
        for j in range(w):
            x, y = float(j), float(i)
            inside = False
            on_edge = False
            for k in range(n):
                x1, y1 = poly[k]
                x2, y2 = poly[(k + 1) % n]
                cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
                if abs(cross) < 1e-9 and min(x1, x2) - 1e-9 <= x <= max(x1, x2) + 1e-9 \
                        and min(y1, y2) - 1e-9 <= y <= max(y1, y2) + 1e-9:
                    on_edge = True
                if (y1 > y) != (y2 > y):
                    xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                    if x < xi:
                        inside = not inside
            out[i, j] = inside or on_edge
    return out


class TestLandmarkTriple:
    def test_json_round_trip(self):
        t = LandmarkTriple((1.5, 2.0), (3.0, 4.25), (5.0, -1.0))
        assert LandmarkTriple.from_json(json.loads(json.dumps(t.to_json()))) == t

    def test_collinear_is_degenerate(self):
        assert LandmarkTriple.from_array([[0, 0], [1, 1], [2, 2]]).is_degenerate()

    def test_area_is_scale_free(self):
        p = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        assert normalized_triangle_area(p) == pytest.approx(normalized_triangle_area(p * 37.0))

    def test_threshold_boundary(self):
        assert normalized_triangle_area(np.array([[0, 0], [1, 0], [0.5, 1e-9]])) < DEGENERACY_THRESHOLD

    def test_rejects_nonfinite(self):
        with pytest.raises((ValueError, DegenerateError)):
            LandmarkTriple((np.nan, 0.0), (1.0, 0.0), (0.0, 1.0))


class TestSequenceIO:
    def test_round_trip(self, tmp_path):
        frames = [np.full((224, 224), v / 255.0) for v in (0, 128, 255)]
        save_sequence(VideoSequence(frames, [0, 1, 2]), tmp_path)
        seq = load_sequence(tmp_path)
        assert len(seq) == 3 and seq.frame_ids == [0, 1, 2]
        for a, b in zip(frames, seq.frames):
            np.testing.assert_array_equal(a, b)

    def test_empty_dir(self, tmp_path):
        with pytest.raises(LoadError, match="no frames"):
            load_sequence(tmp_path)

    def test_dimension_mismatch_names_file(self, tmp_path):
        write_gray(tmp_path / "frame_00000.pgm", np.zeros((224, 224)))
        write_gray(tmp_path / "frame_00001.pgm", np.zeros((128, 128)))
        with pytest.raises(LoadError, match="frame_00001.pgm"):
            load_sequence(tmp_path)

    def test_png_frames(self, tmp_path):
        img = np.linspace(0, 1, 64 * 80).reshape(64, 80)
        write_gray(tmp_path / "frame_00007.png", img)
        seq = load_sequence(tmp_path)
        assert seq.frame_ids == [7]
        np.testing.assert_allclose(seq.frames[0], np.round(img * 255) / 255)

    def test_quantization(self, tmp_path):
        write_gray(tmp_path / "x.pgm", np.array([[0.0, 0.5, 1.0]]))
        np.testing.assert_array_equal(read_gray(tmp_path / "x.pgm"), [[0, 128, 255]])


class TestAnnotationIO:
    def test_minimal(self, tmp_path):
        p = tmp_path / "a.json"
        p.write_text(json.dumps({"frames": [{"id": 0, "landmarks": {"apex": [5, 1], "annulus_left": [1, 9], "annulus_right": [9, 9]}}]}))
        anns = load_annotations(p)
        assert len(anns) == 1 and anns.frames[0].mask is None

    def test_collinear(self, tmp_path):
        p = tmp_path / "a.json"
        p.write_text(json.dumps({"frames": [{"id": 0, "landmarks": {"apex": [0, 0], "annulus_left": [1, 1], "annulus_right": [2, 2]}}]}))
        with pytest.raises(DegenerateError):
            load_annotations(p)

    def test_dangling_frame(self, tmp_path):
        p = tmp_path / "a.json"
        p.write_text(json.dumps({"frames": [{"id": 4}]}))
        with pytest.raises(SchemaError, match="dangling"):
            load_annotations(p, frame_ids=[0, 1])

    @pytest.mark.parametrize("doc", [[], {"frames": {}}, {"frames": [{"id": "a"}]}, {"plane": "PLAX", "frames": []}])
    def test_schema_errors(self, tmp_path, doc):
        p = tmp_path / "a.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(SchemaError):
            load_annotations(p)

    def test_round_trip(self, tmp_path, small_video):
        _, ann = small_video
        save_annotations(ann, tmp_path / "sub" / "ann.json")
        back = load_annotations(tmp_path / "sub" / "ann.json")
        assert back.sequence == ann.sequence and back.plane == ann.plane
        assert sorted(back.frames) == sorted(ann.frames)
        for fid, a in ann.frames.items():
            b = back.frames[fid]
            np.testing.assert_array_equal(a.mask, b.mask)
            assert a.landmarks == b.landmarks and a.plane == b.plane


class TestRasterize:
    def test_square_36(self):
        m = mask_from_contour([[2, 2], [7, 2], [7, 7], [2, 7]], 10, 10)
        assert m.sum() == 36
        np.testing.assert_array_equal(m, brute_inside([[2, 2], [7, 2], [7, 7], [2, 7]], 10, 10))

    def test_outside(self):
        assert mask_from_contour([[20, 20], [30, 20], [30, 30]], 10, 10).sum() == 0

    def test_triangle(self):
        tri = [[0, 0], [9, 0], [0, 9]]
        np.testing.assert_array_equal(mask_from_contour(tri, 10, 10), brute_inside(tri, 10, 10))

    @given(st.integers(0, 10_000))
    def test_random_polygons_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        poly = star_polygon(rng, center=(12.0, 11.0), rmin=3.0, rmax=10.0)
        if rng.random() < 0.5:
            poly = np.round(poly)  # exercise vertices and edges on lattice points
        np.testing.assert_array_equal(mask_from_contour(poly, 24, 22), brute_inside(poly, 24, 22))


class TestContour:
    def test_single_pixel(self):
        m = np.zeros((10, 10), np.uint8)
        m[5, 5] = 1
        c = contour_from_mask(m)
        assert len(c) == 4
        assert {tuple(p) for p in c} == {(4.5, 4.5), (5.5, 4.5), (5.5, 5.5), (4.5, 5.5)}

    def test_square_perimeter(self):
        m = np.zeros((12, 12), np.uint8)
        m[3:8, 2:9] = 1
        c = contour_from_mask(m)
        assert {tuple(p) for p in c} == {(1.5, 2.5), (8.5, 2.5), (8.5, 7.5), (1.5, 7.5)}
        assert polygon_area(c) == pytest.approx(35.0)

    def test_empty(self):
        with pytest.raises(DegenerateError):
            contour_from_mask(np.zeros((5, 5)))

    def test_positive_orientation_and_area(self):
        m = np.zeros((20, 20), np.uint8)
        m[4:9, 4:15] = 1
        m[9:16, 4:8] = 1
        assert polygon_area(contour_from_mask(m)) == pytest.approx(m.sum())

    def test_largest_component_fills_holes(self):
        m = np.zeros((20, 20), np.uint8)
        m[2:12, 2:12] = 1
        m[5:7, 5:7] = 0
        m[15:18, 15:18] = 1
        comp, n = largest_component(m)
        assert n == 2 and comp.sum() == 100

    @given(st.integers(0, 10_000))
    def test_rasterize_trace_identity(self, seed):
        rng = np.random.default_rng(seed)
        poly = star_polygon(rng, center=(40.0, 40.0), rmin=10.0, rmax=30.0)
        m = mask_from_contour(poly, 80, 80)
        comp, _ = largest_component(m)
        if comp.sum() < 100:
            return
        back = mask_from_contour(contour_from_mask(comp), 80, 80)
        assert dice(back, comp) >= 0.98
