import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tan.data import DegenerateError, LandmarkTriple
from tan.geometry import (CANVAS, AffineTransform, ShapeTemplate, apply_to_points, build_template, estimate_affine,
                          expanded_roi, invert, letterbox, mean_normalized_triple, place_template, roi_to_canvas)

coords = st.floats(-500, 500, allow_nan=False)


def random_triple(rng, lo=0.0, hi=400.0):
    while True:
        p = rng.uniform(lo, hi, (3, 2))
        e1, e2 = p[1] - p[0], p[2] - p[0]
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) > 0.05 * (hi - lo) ** 2:
            return p


class TestEstimate:
    def test_identity(self):
        p = [[0, 0], [1, 0], [0, 1]]
        np.testing.assert_array_equal(estimate_affine(p, p).m, [[1, 0, 0], [0, 1, 0]])

    def test_pure_scale(self):
        t = estimate_affine([[0, 0], [1, 0], [0, 1]], [[0, 0], [2, 0], [0, 2]])
        np.testing.assert_allclose(t.m, [[2, 0, 0], [0, 2, 0]], atol=0)

    def test_degenerate_source(self):
        with pytest.raises(DegenerateError):
            estimate_affine([[0, 0], [1, 1], [2, 2]], [[0, 0], [1, 0], [0, 1]])

    def test_accepts_triples(self):
        a = LandmarkTriple((0, 0), (4, 0), (0, 3))
        b = LandmarkTriple((1, 1), (5, 1), (1, 4))
        np.testing.assert_allclose(estimate_affine(a, b).m, [[1, 0, 1], [0, 1, 1]])

    def test_matches_least_squares_oracle(self, rng):
        # with three pairs the linear system is square: lstsq gives the same map
        for _ in range(50):
            s, d = random_triple(rng), random_triple(rng)
            A = np.hstack([s, np.ones((3, 1))])
            sol = np.linalg.solve(A, d).T
            np.testing.assert_allclose(estimate_affine(s, d).m, sol, rtol=1e-9, atol=1e-9)


class TestInvertApply:
    def test_identity(self):
        np.testing.assert_array_equal(invert(AffineTransform.identity()).m, AffineTransform.identity().m)

    def test_translation(self):
        t = AffineTransform(np.array([[1.0, 0, 3.5], [0, 1.0, -2.0]]))
        np.testing.assert_array_equal(invert(t).m, [[1, 0, -3.5], [0, 1, 2.0]])

    def test_singular(self):
        with pytest.raises(DegenerateError):
            invert(AffineTransform(np.array([[1.0, 2.0, 0], [2.0, 4.0, 0]])))

    def test_rotation_90(self):
        t = AffineTransform.from_params(rotation_deg=90.0)
        np.testing.assert_allclose(apply_to_points(t, [[1.0, 0.0]]), [[0.0, 1.0]], atol=1e-15)

    def test_identity_apply(self, rng):
        p = rng.normal(size=(17, 2))
        np.testing.assert_array_equal(apply_to_points(AffineTransform.identity(), p), p)

    def test_matrix_vector_oracle(self, rng):
        for _ in range(20):
            m = rng.normal(size=(2, 3))
            p = rng.normal(size=(30, 2)) * 100
            ref = np.array([m @ np.array([x, y, 1.0]) for x, y in p])
            np.testing.assert_allclose(apply_to_points(AffineTransform(m), p), ref, rtol=1e-12, atol=1e-12)

    def test_compose(self, rng):
        a = AffineTransform(rng.normal(size=(2, 3)))
        b = AffineTransform(rng.normal(size=(2, 3)))
        p = rng.normal(size=(5, 2))
        np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    def test_matrix_is_read_only(self):
        t = AffineTransform.identity()
        with pytest.raises(ValueError):
            t.m[0, 0] = 2.0

    @given(st.lists(coords, min_size=6, max_size=6), st.lists(coords, min_size=6, max_size=6))
    def test_round_trip_property(self, s, d):
        s = np.reshape(s, (3, 2))
        d = np.reshape(d, (3, 2))
        try:
            t = estimate_affine(s, d)
            inv = invert(t)
        except DegenerateError:
            return
        scale = max(1.0, np.abs(d).max(), np.abs(s).max())
        np.testing.assert_allclose(t.apply(s), d, atol=1e-7 * scale)
        np.testing.assert_allclose(inv.apply(t.apply(s)), s, atol=1e-6 * scale)


class TestCanvasMaps:
    def test_letterbox_square_is_identity_at_canvas_size(self):
        np.testing.assert_allclose(letterbox(CANVAS, CANVAS).m, AffineTransform.identity().m, atol=1e-12)

    def test_letterbox_extent(self):
        t = letterbox(384, 256)
        # long side spans the canvas extent, short side padded symmetrically
        np.testing.assert_allclose(t.apply([[-0.5, -0.5], [383.5, 255.5]]),
                                   [[-0.5, -0.5 + (224 - 224 * 256 / 384) / 2], [223.5, 223.5 - (224 - 224 * 256 / 384) / 2]])

    def test_roi_center_maps_to_canvas_center(self):
        t = roi_to_canvas(10, 20, 110, 70)
        np.testing.assert_allclose(t.apply([[60.0, 45.0]]), [[111.5, 111.5]])

    def test_expanded_roi(self):
        x0, y0, x1, y1 = expanded_roi(np.array([[50.0, 0.0], [0.0, 100.0], [100.0, 100.0]]))
        assert (x0, y1) == (-50.0, 150.0)
        assert (y0, x1) == pytest.approx((-5.0, 105.0))


class TestTemplate:
    def test_single_sample(self):
        lm = LandmarkTriple((200, 80), (150, 260), (250, 270))
        tmpl = build_template([lm], [(400, 400)])
        np.testing.assert_allclose(tmpl.landmarks.as_array(), place_template(lm.as_array() / 400.0).landmarks.as_array())

    def test_symmetric_pair_midpoint(self):
        a = np.array([[100.0, 50.0], [60.0, 200.0], [160.0, 210.0]])
        b = 2 * np.array([150.0, 150.0]) - a
        m = mean_normalized_triple([LandmarkTriple.from_array(a), LandmarkTriple.from_array(b)], [(300, 300)] * 2)
        np.testing.assert_allclose(m.mean(axis=0) * 300, [150, 150])
        np.testing.assert_allclose(m * 300, np.full((3, 2), 150.0), atol=1e-12)

    def test_mean_oracle(self, rng):
        trips = [random_triple(rng) for _ in range(100)]
        dims = [(int(rng.integers(200, 500)), int(rng.integers(200, 500))) for _ in trips]
        ref = np.zeros((3, 2))
        for p, (w, h) in zip(trips, dims):
            for k in range(3):
                ref[k, 0] += p[k, 0] / w
                ref[k, 1] += p[k, 1] / h
        got = mean_normalized_triple([LandmarkTriple.from_array(p) for p in trips], dims)
        np.testing.assert_allclose(got, ref / 100, atol=1e-12)

    def test_placement_fills_canvas(self):
        tmpl = place_template(np.array([[0.5, 0.2], [0.35, 0.7], [0.65, 0.72]]))
        p = tmpl.landmarks.as_array()
        x0, y0, x1, y1 = expanded_roi(p)
        # long side of the expanded ROI spans the canvas extent
        assert max(x1 - x0, y1 - y0) == pytest.approx(CANVAS)
        assert -0.5 - 1e-9 <= min(x0, y0) and max(x1, y1) <= CANVAS - 0.5 + 1e-9

    def test_json(self, tmp_path):
        tmpl = ShapeTemplate(LandmarkTriple((112, 30), (70, 160), (150, 165)))
        tmpl.save(tmp_path / "t.json")
        doc = json.loads((tmp_path / "t.json").read_text())
        assert doc["canvas"] == [224, 224] and doc["apex"] == [112, 30]
        assert ShapeTemplate.load(tmp_path / "t.json") == tmpl

    def test_empty(self):
        with pytest.raises(ValueError):
            build_template([], [])
