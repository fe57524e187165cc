"""Threshold scans on truth-labelled toy data.

Cut thresholds are chosen as quantiles of the true-triplet distributions.
All four cuts give up the same fraction ``q`` of true triplets on their
own; ``q`` is then found by bisection so that the joint retention just
reaches the requested target. The vertex chi2 limit is a quantile of the
best signal-vertex chi2 over reconstructable signal frames.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .cuts import CutConfig
from .geometry import circle_radius_3pt
from .pipeline import PipelineConfig, process_frames
from .vertex import triple_vertices


@dataclass
class TuneResult:
    config: object
    target: float
    achieved: float
    n_samples: int
    reachable: bool = True
    note: str = ""


def triplet_features(h0, h1, h2, geometry):
    """Cut quantities of stacked triplets: |dlambda|, cos01, cos12, |rt|."""
    r0, r1, r2 = geometry.layer_radii[:3]
    dl = np.abs((h2[:, 2] - h1[:, 2]) / (r2 - r1) - (h1[:, 2] - h0[:, 2]) / (r1 - r0))

    def cos(a, b):
        n = np.hypot(a[:, 0], a[:, 1]) * np.hypot(b[:, 0], b[:, 1])
        return np.clip((a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]) / n, -1.0, 1.0)

    rt = np.abs(circle_radius_3pt(h0, h1, h2))
    return np.column_stack([dl, cos(h0, h1), cos(h1, h2), rt])


def truth_triplets(frames, truths):
    """Hits of every true particle that crossed layers 0, 1 and 2."""
    h = [[], [], []]
    for frame in frames:
        truth = truths[frame.frame_id]
        for p in truth.particles:
            idx = p.hit_indices
            if min(idx[:3]) >= 0:
                for layer in range(3):
                    h[layer].append(frame.layer(layer)[idx[layer]])
    return tuple(np.asarray(x, dtype=float).reshape(-1, 3) for x in h)


def cuts_for_loss(features, q, cuts_max=768) -> CutConfig:
    """Thresholds that each drop a fraction ``q`` of the sample."""
    dl, c01, c12, rt = features.T
    rt_lo = np.quantile(rt, q / 2.0)
    rt_hi = np.quantile(rt, 1.0 - q / 2.0)
    if rt_hi <= rt_lo:
        rt_hi = np.nextafter(rt_lo, math.inf)
    return CutConfig(
        float(np.quantile(dl, 1.0 - q)),
        float(np.quantile(c01, q)),
        float(np.quantile(c12, q)),
        float(rt_lo),
        float(rt_hi),
        cuts_max,
    )


def joint_retention(features, cuts: CutConfig) -> float:
    if len(features) == 0:
        return float("nan")
    dl, c01, c12, rt = features.T
    ok = (
        (dl <= cuts.delta_lambda_max)
        & (c01 >= cuts.phi01_min_cos)
        & (c12 >= cuts.phi12_min_cos)
        & (rt >= cuts.rt_min)
        & (rt <= cuts.rt_max)
    )
    return float(ok.mean())


def tune_cuts(frames, truths, geometry, retention=0.985, cuts_max=768) -> TuneResult:
    features = triplet_features(*truth_triplets(frames, truths), geometry)
    n = len(features)
    if retention >= 1.0:
        cfg = CutConfig.vacuous(cuts_max)
        return TuneResult(cfg, retention, 1.0 if n else float("nan"), n)
    if n == 0:
        return TuneResult(
            CutConfig.vacuous(cuts_max), retention, float("nan"), 0, False, "no true triplets"
        )
    if retention <= 0.0:
        warnings.warn("retention 0 requested: thresholds collapse to the sample medians")
        cfg = cuts_for_loss(features, 1.0, cuts_max)
        return TuneResult(cfg, retention, joint_retention(features, cfg), n, True, "degenerate")

    lo, hi = 0.0, 1.0  # joint retention is non-increasing in q
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if joint_retention(features, cuts_for_loss(features, mid, cuts_max)) >= retention:
            lo = mid
        else:
            hi = mid
    cfg = cuts_for_loss(features, lo, cuts_max)
    achieved = joint_retention(features, cfg)
    return TuneResult(cfg, retention, achieved, n, achieved >= retention)


def signal_vertex_chi2(frames, truths, config: PipelineConfig):
    """Best vertex chi2 of the true signal triple per reconstructable signal frame.

    Only candidates passing the target and momentum checks count; frames
    where none does give ``inf``. Frames where a signal track was lost
    before the vertex stage are skipped.
    """
    loose = replace(config.vertex, chi2_vertex_max=math.inf)
    cfg = replace(config, vertex=loose)
    sig_frames = [f for f in frames if truths[f.frame_id].signal_in_acceptance]
    if not sig_frames:
        return np.empty(0)
    _, details = process_frames(sig_frames, cfg, details=True)
    out = []
    for frame, info in zip(sig_frames, details):
        tracks = info["tracks"]
        by_hits = {t.hits: i for i, t in enumerate(tracks)}
        sig = [tuple(p.hit_indices) for p in truths[frame.frame_id].signal_particles()]
        if not all(s in by_hits for s in sig):
            continue
        triple = tuple(by_hits[s] for s in sig)
        cands = [c for c in triple_vertices(tracks, triple, loose, config.geometry) if c.passed]
        out.append(min((c.chi2 for c in cands), default=math.inf))
    return np.asarray(out)


def tune_vertex(frames, truths, config: PipelineConfig, retention=0.99) -> TuneResult:
    chi2 = signal_vertex_chi2(frames, truths, config)
    if len(chi2) == 0:
        return TuneResult(config.vertex, retention, float("nan"), 0, False, "no signal frames")
    if retention >= 1.0:
        limit = float(np.max(chi2))
    else:
        limit = float(np.quantile(chi2, retention, method="higher"))
    if not math.isfinite(limit):
        finite = chi2[np.isfinite(chi2)]
        limit = float(finite.max()) if len(finite) else config.vertex.chi2_vertex_max
        achieved = float(np.mean(chi2 <= limit))
        cfg = replace(config.vertex, chi2_vertex_max=max(limit, 1e-12))
        return TuneResult(cfg, retention, achieved, len(chi2), False, "target unreachable")
    limit = max(limit, 1e-12)
    cfg = replace(config.vertex, chi2_vertex_max=limit)
    return TuneResult(cfg, retention, float(np.mean(chi2 <= limit)), len(chi2))
