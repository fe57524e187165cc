import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mu3e_filter.cuts import CutConfig, pass_delta_lambda, pass_phi, pass_rt, select_triplets
from mu3e_filter.framestore import Frame
from mu3e_filter.geometry import DetectorGeometry, circle_radius_3pt
from mu3e_filter.toygen import GenConfig, generate_frames

from oracles import points_on_circle

GEOM = DetectorGeometry()
R = GEOM.layer_radii


def _hit(layer, phi, z):
    return np.array([R[layer] * math.cos(phi), R[layer] * math.sin(phi), z])


def test_delta_lambda():
    cfg = CutConfig(delta_lambda_max=0.01)
    # straight line in (r, z)
    h = [_hit(i, 0.1, 2.0 + 0.5 * R[i]) for i in range(3)]
    assert pass_delta_lambda(*h, cfg, GEOM)
    kinked = [h[0], h[1], h[2] + np.array([0, 0, 1.0])]
    assert not pass_delta_lambda(*kinked, CutConfig(delta_lambda_max=0.0), GEOM)


def test_pass_phi():
    assert pass_phi((3, 4), (6, 8), 0.999999)
    assert not pass_phi((1, 0), (-1, 0), 0.0)
    assert pass_phi((1, 0), (-1, 0), -1.0)
    assert not pass_phi((0, 0), (1, 0), -1.0)


def test_pass_rt():
    cfg = CutConfig(rt_min=10, rt_max=200)
    pts = points_on_circle((0, 0), 50.0, [0, 30, 70])
    ok, rt = pass_rt(*pts, cfg)
    assert ok and rt == pytest.approx(50.0)
    ok, rt = pass_rt(*pts[::-1], cfg)
    assert ok and rt == pytest.approx(-50.0)
    ok, _ = pass_rt(np.zeros(3), np.array([1.0, 0, 0]), np.array([2.0, 0, 0]), cfg)
    assert not ok


def test_config_validation():
    with pytest.raises(ValueError):
        CutConfig(rt_min=10, rt_max=10)
    with pytest.raises(ValueError):
        CutConfig(cuts_max=0)
    with pytest.raises(ValueError):
        CutConfig(phi01_min_cos=1.5)


def test_empty_layer():
    f = Frame.from_layers(0, [[_hit(0, 0, 0)], [], [_hit(2, 0, 0)], []])
    c = select_triplets(f, GEOM, CutConfig())
    assert len(c) == 0 and not c.overflow and c.funnel == (0, 0, 0, 0, 0)


def _single_track_frames(seed, n):
    cfg = GenConfig(
        muon_rate=1.5625e7, sigma_ms=0.0, pixel_sigma=0.0, noise_hits_per_frame=0.0, seed=seed
    )
    for frame, truth in generate_frames(cfg, GEOM, n):
        ps = [p for p in truth.particles if p.n_layers_hit == 4]
        if len(truth.particles) == 1 and ps:
            yield frame, ps[0]


def test_noiseless_single_track_exactly_one_candidate():
    seen = 0
    for frame, p in _single_track_frames(1, 400):
        c = select_triplets(frame, GEOM, CutConfig())
        assert len(c) == 1
        assert tuple(c.idx[0]) == tuple(p.hit_indices[:3])
        seen += 1
    assert seen > 20


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_true_triplet_survives_default_cuts(seed):
    cfg = GenConfig(sigma_ms=0.0, pixel_sigma=0.0, noise_hits_per_frame=3.0, seed=seed, signal_fraction=0.5)
    for frame, truth in generate_frames(cfg, GEOM, 20):
        c = select_triplets(frame, GEOM, CutConfig())
        got = {tuple(r) for r in c.idx}
        for p in truth.particles:
            if p.n_layers_hit == 4:
                assert tuple(p.hit_indices[:3]) in got


def _brute_force(frame, cfg):
    """Plain triple loop applying the four tests in order."""
    out = []
    l0, l1, l2 = (np.asarray(frame.layer(i), dtype=float) for i in range(3))
    for i in range(len(l0)):
        for j in range(len(l1)):
            for k in range(len(l2)):
                a, b, c = l0[i], l1[j], l2[k]
                dl = (c[2] - b[2]) / (R[2] - R[1]) - (b[2] - a[2]) / (R[1] - R[0])
                if abs(dl) > cfg.delta_lambda_max:
                    continue
                if not pass_phi(a, b, cfg.phi01_min_cos):
                    continue
                if not pass_phi(b, c, cfg.phi12_min_cos):
                    continue
                ok, _ = pass_rt(a, b, c, cfg)
                if ok:
                    out.append((i, j, k))
    return out


def _random_frame(rng, counts):
    layers = []
    for i, n in enumerate(counts):
        phi = rng.uniform(-0.4, 0.4, n)
        z = rng.uniform(-30, 30, n)
        layers.append(np.stack([R[i] * np.cos(phi), R[i] * np.sin(phi), z], -1))
    return Frame.from_layers(0, layers)


cut_configs = st.builds(
    CutConfig,
    st.floats(0.0, 2.0),
    st.floats(-1.0, 1.0),
    st.floats(-1.0, 1.0),
    st.floats(0.0, 50.0),
    st.floats(60.0, 1e4),
    st.integers(1, 50),
)


@settings(max_examples=150, deadline=None)
@given(st.tuples(*[st.integers(0, 6)] * 4), cut_configs, st.integers(0, 2**31))
def test_select_matches_brute_force_and_funnel_monotone(counts, cfg, seed):
    frame = _random_frame(np.random.default_rng(seed), counts)
    c = select_triplets(frame, GEOM, cfg)
    ref = _brute_force(frame, cfg)
    assert [tuple(r) for r in c.idx] == ref[: cfg.cuts_max]
    assert c.overflow == (len(ref) > cfg.cuts_max)
    f = c.funnel
    assert f[0] == counts[0] * counts[1] * counts[2]
    assert all(b <= a for a, b in zip(f, f[1:]))
    assert f[4] == len(ref)


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[st.integers(0, 7)] * 4), st.integers(1, 400), st.integers(0, 2**31))
def test_vacuous_cuts_give_full_set_truncated(counts, cuts_max, seed):
    frame = _random_frame(np.random.default_rng(seed), counts)
    c = select_triplets(frame, GEOM, CutConfig.vacuous(cuts_max))
    full = [(i, j, k) for i in range(counts[0]) for j in range(counts[1]) for k in range(counts[2])]
    assert [tuple(r) for r in c.idx] == full[:cuts_max]
    assert c.overflow == (len(full) > cuts_max)


def test_deterministic():
    cfg = GenConfig(seed=4)
    frame, _ = next(iter(generate_frames(cfg, GEOM, 1)))
    a = select_triplets(frame, GEOM, CutConfig())
    b = select_triplets(frame, GEOM, CutConfig())
    assert np.array_equal(a.idx, b.idx) and np.array_equal(a.rt, b.rt)


def test_cached_rt_matches_circle():
    cfg = GenConfig(seed=5)
    frame, _ = next(iter(generate_frames(cfg, GEOM, 1)))
    c = select_triplets(frame, GEOM, CutConfig.vacuous())
    for (i, j, k), rt in zip(c.idx, c.rt):
        h = [frame.layer(n)[m] for n, m in enumerate((i, j, k))]
        assert rt == circle_radius_3pt(*h)
