import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mu3e_filter.geometry import Circle2D, DetectorGeometry
from mu3e_filter.pipeline import PipelineConfig, process_frames
from mu3e_filter.toygen import GenConfig, generate_frames
from mu3e_filter.tripletfit import TrackCandidate
from mu3e_filter.vertex import (
    VertexConfig,
    candidate_triples,
    circle_intersections,
    energy_precheck,
    evaluate_frame,
    near_miss_point,
    point_of_closest_approach,
    project_to_z,
    vertex_2d,
    vertex_chi2,
)

from oracles import C_LIGHT, ELECTRON_MASS, MUON_ENERGY, circle_scan_closest, helix_points, weighted_mean

GEOM = DetectorGeometry()
# frozen from oracles.weighted_mean([(0, 0), (3, 0), (0, 3)], [1, 2, 3])
WEIGHTED_DERIVED = (9 / 11, 6 / 11)


class _E:
    def __init__(self, energy):
        self.energy = energy


def test_energy_precheck():
    cfg = VertexConfig(energy_window=10.0)
    assert energy_precheck([_E(40.0), _E(30.0), _E(MUON_ENERGY - 70.0)], cfg)
    e52 = math.hypot(52.0, ELECTRON_MASS)
    assert 3 * e52 == pytest.approx(156.0, abs=0.1)
    assert not energy_precheck([_E(e52)] * 3, cfg)
    assert energy_precheck([_E(e52)] * 3, VertexConfig(energy_window=math.inf))


def test_circle_intersections_examples():
    pts = circle_intersections(Circle2D((0, 0), 5.0), Circle2D((8, 0), 5.0))
    got = sorted(tuple(np.round(p, 12)) for p in pts)
    assert got == [(4.0, -3.0), (4.0, 3.0)]
    assert circle_intersections(Circle2D((0, 0), 1.0), Circle2D((10, 0), 1.0)) == []
    assert circle_intersections(Circle2D((0, 0), 1.0), Circle2D((0, 0), 3.0)) == []
    with pytest.raises(ValueError):
        circle_intersections(Circle2D((1, 2), 4.0), Circle2D((1, 2), -4.0))


def test_tangent_circles_touch_twice():
    pts = circle_intersections(Circle2D((0, 0), 2.0), Circle2D((5, 0), 3.0))
    assert len(pts) == 2
    np.testing.assert_allclose(pts[0], (2, 0), atol=1e-7)
    np.testing.assert_allclose(pts[1], (2, 0), atol=1e-7)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(1, 100),
    st.floats(-50, 50), st.floats(-50, 50), st.floats(1, 100),
)
def test_intersections_lie_on_both_circles(x1, y1, r1, x2, y2, r2):
    d = math.hypot(x2 - x1, y2 - y1)
    if not (abs(r1 - r2) + 1e-3 < d < r1 + r2 - 1e-3):
        return
    c1, c2 = Circle2D((x1, y1), r1), Circle2D((x2, y2), -r2)
    pts = circle_intersections(c1, c2)
    assert len(pts) == 2
    for p in pts:
        assert abs(math.hypot(p[0] - x1, p[1] - y1) - r1) <= 1e-9 * max(1.0, r1)
        assert abs(math.hypot(p[0] - x2, p[1] - y2) - r2) <= 1e-9 * max(1.0, r2)


def test_near_miss_point():
    p = near_miss_point(Circle2D((0, 0), 1.0), Circle2D((3.5, 0), 1.0), 2.0)
    np.testing.assert_allclose(p, (1.75, 0.0))
    assert near_miss_point(Circle2D((0, 0), 1.0), Circle2D((10, 0), 1.0), 2.0) is None
    # one circle inside the other, gap 0.5
    p = near_miss_point(Circle2D((0, 0), 5.0), Circle2D((1, 0), 3.5), 2.0)
    np.testing.assert_allclose(p, (4.75, 0.0))


def test_vertex_2d_examples():
    pts = [(0, 0), (3, 0), (0, 3)]
    np.testing.assert_allclose(vertex_2d(pts, [2, 2, 2]), (1, 1), rtol=1e-15)
    np.testing.assert_allclose(vertex_2d(pts, [1e-30, 1, 1]), (0, 0), atol=1e-20)
    ref = weighted_mean(pts, [1, 2, 3])
    np.testing.assert_allclose(ref, WEIGHTED_DERIVED, rtol=1e-15)
    np.testing.assert_allclose(vertex_2d(pts, [1, 2, 3]), WEIGHTED_DERIVED, rtol=1e-9)


coords = st.floats(-100, 100)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.tuples(coords, coords), min_size=3, max_size=3),
    st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3),
    coords,
    coords,
)
def test_vertex_2d_oracle_and_translation(pts, var, tx, ty):
    mu = vertex_2d(pts, var)
    np.testing.assert_allclose(mu, weighted_mean(pts, var), rtol=1e-9, atol=1e-9)
    moved = vertex_2d([(x + tx, y + ty) for x, y in pts], var)
    np.testing.assert_allclose(moved, mu + (tx, ty), atol=1e-9)


def test_pca_examples():
    c = Circle2D((0, 0), 1.0)
    np.testing.assert_allclose(point_of_closest_approach(c, (2, 0)), (1, 0))
    on = (math.cos(0.7), math.sin(0.7))
    np.testing.assert_allclose(point_of_closest_approach(c, on), on, atol=1e-15)
    with pytest.raises(ValueError):
        point_of_closest_approach(c, (0, 0))


@settings(max_examples=100, deadline=None)
@given(coords, coords, st.floats(1, 100), coords, coords)
def test_pca_scan_oracle(cx, cy, r, tx, ty):
    if math.hypot(tx - cx, ty - cy) < 1e-3:
        return
    p = point_of_closest_approach(Circle2D((cx, cy), r), (tx, ty))
    _, dmin = circle_scan_closest((cx, cy), r, (tx, ty))
    d = math.hypot(p[0] - tx, p[1] - ty)
    assert d <= dmin + 1e-9
    # a grid point sits at most pi/n from the optimum; second order in that offset
    big_r = math.hypot(tx - cx, ty - cy)
    assert dmin - d <= big_r * r * (math.pi / 10_000) ** 2 / (2 * max(d, 1e-12)) + 1e-9


def test_vertex_chi2_examples():
    mu = np.array([1.0, 2.0, 3.0])
    assert vertex_chi2([mu, mu, mu], mu, [1, 1, 1]) == 0.0
    assert vertex_chi2([mu + (1, 0, 0), mu, mu], mu, [1, 1, 1]) == 1.0
    rng = np.random.default_rng(0)
    pts = rng.normal(0, 1, (3, 3))
    s2 = rng.uniform(0.1, 2, 3)
    ref = sum(((pts[i] - mu) ** 2).sum() / s2[i] for i in range(3))
    assert vertex_chi2(pts, mu, s2) == pytest.approx(ref, rel=1e-12)


def _track_from_helix(origin, momentum, charge, arcs=(0.0,)):
    pts, centre, r = helix_points(origin, momentum, charge, 1.0, arcs)
    pt = math.hypot(momentum[0], momentum[1])
    return TrackCandidate(
        (0, 0, 0, 0), charge * C_LIGHT / pt, 0.0, momentum[2] / pt, pts[0], Circle2D(centre, charge * r)
    )


def test_project_to_z_at_first_hit():
    t = _track_from_helix((1.0, 2.0, 5.0), (20.0, 5.0, 8.0), 1)
    assert project_to_z(t, t.first_hit[:2]) == pytest.approx(5.0, abs=1e-12)


@pytest.mark.parametrize("charge", [1, -1])
def test_project_to_z_recovers_upstream_point(charge):
    origin, mom = (3.0, -4.0, 12.0), (15.0, 22.0, -9.0)
    (start, hit), centre, r = helix_points(origin, mom, charge, 1.0, [0.0, 35.0])
    t = TrackCandidate(
        (0, 0, 0, 0), charge * C_LIGHT / math.hypot(*mom[:2]), 0.0, mom[2] / math.hypot(*mom[:2]),
        hit, Circle2D(centre, charge * r),
    )
    assert project_to_z(t, start[:2]) == pytest.approx(origin[2], abs=1e-9)


def test_project_to_z_direction_sign():
    t = _track_from_helix((0.0, 0.0, 0.0), (20.0, 5.0, 8.0), 1, arcs=(30.0,))
    p = point_of_closest_approach(t.circle, (0.0, 0.0))
    fwd = project_to_z(t, p) - t.first_hit[2]
    back = replace(t, kappa=-t.kappa)
    assert project_to_z(back, p) - t.first_hit[2] == pytest.approx(-fwd, rel=1e-12)


def test_momentum_at_matches_helix_derivative():
    origin, mom = (2.0, 1.0, -3.0), (12.0, -25.0, 14.0)
    for charge in (1, -1):
        t = _track_from_helix(origin, mom, charge, arcs=(40.0,))
        s, h = 17.0, 1e-4
        (a, b), _, _ = helix_points(origin, mom, charge, 1.0, [s - h, s + h])
        tangent = (b - a) / np.linalg.norm(b - a)
        p_here = helix_points(origin, mom, charge, 1.0, [s])[0][0]
        m = t.momentum_at(p_here[:2])
        np.testing.assert_allclose(m / np.linalg.norm(m), tangent, atol=1e-8)
        pt = math.hypot(*mom[:2])
        lam = math.atan2(mom[2], pt)
        assert np.linalg.norm(m) == pytest.approx(pt / math.cos(lam), rel=1e-12)
        assert abs(np.dot(m[:2], p_here[:2] - t.circle.center)) < 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        VertexConfig(energy_window=0)
    with pytest.raises(ValueError):
        VertexConfig(max_track_combs=0)
    with pytest.raises(ValueError):
        VertexConfig(near_miss=-1)


# -- frame level -------------------------------------------------------------------


def _frames_with_tracks(cfg, n, config=None):
    config = config or PipelineConfig()
    pairs = list(generate_frames(cfg, GEOM, n, dtype=np.float64))
    _, det = process_frames([f for f, _ in pairs], config, details=True)
    return [(t, info["tracks"]) for (_, t), info in zip(pairs, det)]


NOISELESS_SIGNAL = GenConfig(
    muon_rate=0.0, sigma_ms=0.0, pixel_sigma=0.0, noise_hits_per_frame=0.0,
    signal_fraction=1.0, ms_tail_fraction=0.0, seed=21,
)


def test_no_tracks_discard():
    d = evaluate_frame([], VertexConfig(), GEOM)
    assert not d.keep and d.reason == "none" and d.n_triples == 0


def test_noiseless_signal_vertex():
    rows = _frames_with_tracks(NOISELESS_SIGNAL, 400)
    n = 0
    for truth, tracks in rows:
        if not truth.signal_in_acceptance:
            continue
        d = evaluate_frame(tracks, VertexConfig(), GEOM)
        assert d.keep and d.reason == "vertex_found"
        origin = truth.particles[0].origin
        assert np.linalg.norm(d.vertex.position - origin) < 1e-3
        assert np.linalg.norm(d.vertex.total_momentum) < 1e-3
        n += 1
    assert n > 100


def test_noiseless_signal_z_closure():
    rows = _frames_with_tracks(NOISELESS_SIGNAL, 100)
    n = 0
    for truth, tracks in rows:
        by_hits = {t.hits: t for t in tracks}
        for p in truth.signal_particles():
            t = by_hits.get(tuple(p.hit_indices))
            if t is None:
                continue
            pca = point_of_closest_approach(t.circle, p.origin[:2])
            assert np.linalg.norm(pca - p.origin[:2]) < 1e-6
            assert abs(project_to_z(t, pca) - p.origin[2]) < 1e-6
            n += 1
    assert n > 50


def test_comb_overflow():
    rows = _frames_with_tracks(NOISELESS_SIGNAL, 30)
    truth, tracks = next(r for r in rows if r[0].signal_in_acceptance)
    d = evaluate_frame(tracks, VertexConfig(max_track_combs=1, energy_window=math.inf), GEOM)
    assert d.n_triples == 1 and d.keep
    many = tracks + [replace(t, hits=(9 + i, 9 + i, 9 + i, 9 + i)) for i, t in enumerate(tracks)]
    d = evaluate_frame(many, VertexConfig(max_track_combs=1, energy_window=math.inf), GEOM)
    assert d.keep and d.reason == "comb_overflow" and d.n_triples > 1


def test_shared_hit_triples_skipped():
    a = _track_from_helix((0, 0, 0), (20, 5, 3), 1)
    b = replace(a, hits=(0, 1, 1, 1))
    e = replace(_track_from_helix((0, 0, 0), (-20, 5, 3), -1), hits=(2, 2, 2, 2))
    assert list(candidate_triples([a, b, e])) == []
    b = replace(a, hits=(1, 1, 1, 1))
    assert list(candidate_triples([a, b, e])) == [(0, 1, 2)]


@pytest.fixture(scope="module")
def nominal_signal_tracks():
    cfg = GenConfig(signal_fraction=1.0, seed=23)
    return [tr for _, tr in _frames_with_tracks(cfg, 250) if len(tr) >= 3]


scales = st.floats(1.0, 5.0)


@settings(max_examples=200, deadline=None)
@given(st.data(), scales, scales, scales, scales)
def test_threshold_monotonicity(nominal_signal_tracks, data, a, b, c, d):
    tracks = data.draw(st.sampled_from(nominal_signal_tracks))
    base = VertexConfig(energy_window=5.0, chi2_vertex_max=50.0, target_margin=1.0, p_total_max=5.0)
    wide = replace(
        base,
        energy_window=base.energy_window * a,
        chi2_vertex_max=base.chi2_vertex_max * b,
        target_margin=base.target_margin * c,
        p_total_max=base.p_total_max * d,
        max_track_combs=10**6,
    )
    base = replace(base, max_track_combs=10**6)
    if evaluate_frame(tracks, base, GEOM).keep:
        assert evaluate_frame(tracks, wide, GEOM).keep


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_reorder_invariance(nominal_signal_tracks, data):
    tracks = data.draw(st.sampled_from(nominal_signal_tracks))
    perm = data.draw(st.permutations(range(len(tracks))))
    d1 = evaluate_frame(tracks, VertexConfig(), GEOM)
    d2 = evaluate_frame([tracks[i] for i in perm], VertexConfig(), GEOM)
    assert (d1.keep, d1.reason, d1.n_triples) == (d2.keep, d2.reason, d2.n_triples)
    if d1.vertex is not None:
        assert d1.vertex.chi2 == pytest.approx(d2.vertex.chi2, rel=1e-12)
        np.testing.assert_allclose(d1.vertex.position, d2.vertex.position, rtol=1e-12, atol=1e-12)
