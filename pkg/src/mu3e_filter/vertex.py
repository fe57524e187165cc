"""Stage 3: vertex estimate for (e+, e+, e-) track triples.

Tracks are circles in the transverse plane. For each triple the pairwise
circle intersections near the target are combined into a weighted mean, the
closest point on each circle is lifted to 3D along the helix, and the
spread of those points around the mean gives the vertex chi2.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PHYSICS, Circle2D, highland_sigma, wrap_angle

TANGENT_TOL = 1e-9


@dataclass
class VertexConfig:
    energy_window: float = 10.0  # MeV
    chi2_vertex_max: float = 1000.0  # order of the 99 % signal quantile on toy data
    target_margin: float = 5.0  # mm
    p_total_max: float = 15.0  # MeV/c
    max_track_combs: int = 32
    pixel_sigma: float = 0.080 / math.sqrt(12.0)  # mm
    # circles missing each other by at most this much count as touching
    near_miss: float = 2.0  # mm

    def __post_init__(self):
        for name in ("energy_window", "chi2_vertex_max", "target_margin", "p_total_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_track_combs <= 0:
            raise ValueError("max_track_combs must be positive")
        if self.pixel_sigma < 0 or self.near_miss < 0:
            raise ValueError("pixel_sigma and near_miss must be non-negative")


@dataclass
class VertexCandidate:
    position: np.ndarray
    chi2: float
    triple: tuple  # track indices (positron_a, positron_b, electron)
    pca_points: np.ndarray  # (3, 3)
    total_momentum: np.ndarray
    passed: bool = False


@dataclass
class VertexDecision:
    keep: bool
    reason: str  # "vertex_found", "comb_overflow" or "none"
    n_triples: int = 0
    vertex: VertexCandidate | None = None
    candidates: list = field(default_factory=list)


def energy_precheck(triple, config, constants=PHYSICS) -> bool:
    total = sum(t.energy for t in triple)
    return abs(total - constants.muon_rest_energy) <= config.energy_window


def circle_intersections(c1: Circle2D, c2: Circle2D) -> list:
    """Transverse intersection points of two circles (0 or 2 points).

    A tangent pair gives the touching point twice. Identical circles have
    no isolated intersections and raise ``ValueError``.
    """
    r1, r2 = c1.radius, c2.radius
    delta = c2.center - c1.center
    d = math.hypot(*delta)
    scale = max(r1, r2) ** 2
    if d == 0.0:
        if abs(r1 - r2) <= TANGENT_TOL * max(r1, r2):
            raise ValueError("identical circles")
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    h2 = r1 * r1 - a * a
    if h2 < -TANGENT_TOL * scale:
        return []
    h = math.sqrt(max(h2, 0.0))
    u = delta / d
    base = c1.center + a * u
    perp = np.array([-u[1], u[0]])
    return [base + h * perp, base - h * perp]


def near_miss_point(c1: Circle2D, c2: Circle2D, max_gap):
    """Midpoint of the closest approach of two disjoint circles, or None.

    Returns None unless the circles miss each other by at most ``max_gap``.
    """
    delta = c2.center - c1.center
    d = math.hypot(*delta)
    if d == 0.0:
        return None
    u = delta / d
    r1, r2 = c1.radius, c2.radius
    if d >= r1 + r2:  # side by side
        gap = d - r1 - r2
        p1, p2 = c1.center + r1 * u, c2.center - r2 * u
    else:  # one inside the other
        gap = abs(r1 - r2) - d
        sgn = 1.0 if r1 >= r2 else -1.0
        p1, p2 = c1.center + sgn * r1 * u, c2.center + sgn * r2 * u
    if gap < 0 or gap > max_gap:
        return None
    return 0.5 * (p1 + p2)


def vertex_2d(points, sigmas2):
    """Inverse-variance weighted mean of transverse points."""
    points = np.asarray(points, dtype=float)
    w = 1.0 / np.asarray(sigmas2, dtype=float)
    return (points * w[:, None]).sum(0) / w.sum()


def point_of_closest_approach(circle: Circle2D, mu_t):
    e = np.asarray(mu_t, dtype=float)[:2] - circle.center
    n = math.hypot(*e)
    if n == 0.0:
        raise ValueError("point sits at the circle center")
    return circle.center + circle.radius * e / n


def _turn_from_first_hit(track, point):
    """Signed angle about the circle center from the first hit to ``point``."""
    c = track.circle.center
    a0 = math.atan2(track.first_hit[1] - c[1], track.first_hit[0] - c[0])
    a1 = math.atan2(point[1] - c[1], point[0] - c[0])
    return float(wrap_angle(a0 - a1))


def project_to_z(track, pca_t) -> float:
    """z of the helix where it passes the transverse point ``pca_t``.

    The angle is measured from the first hit back to ``pca_t``; a positive
    value means ``pca_t`` lies upstream for a counter-clockwise track.
    """
    dphi = _turn_from_first_hit(track, pca_t)
    return float(track.first_hit[2] - dphi / track.kappa * track.tan_lambda)


def position_sigma2(track, point, x_over_x0, pixel_sigma):
    """Variance (mm^2) of a track's position at ``point`` from scattering and pixels."""
    s = abs(_turn_from_first_hit(track, point)) * track.circle.radius
    sig = float(highland_sigma(track.p, x_over_x0))
    return sig**2 * s**2 + pixel_sigma**2


def vertex_chi2(pca_3d, mu, sigmas2) -> float:
    d = np.asarray(pca_3d, dtype=float) - np.asarray(mu, dtype=float)
    return float(((d * d).sum(-1) / np.asarray(sigmas2, dtype=float)).sum())


def _shares_hit(a, b):
    return any(i == j and i >= 0 for i, j in zip(a.hits, b.hits))


def triple_vertices(tracks, triple, config, geometry):
    """All vertex candidates of one triple, one per intersection choice."""
    trk = [tracks[i] for i in triple]
    reach = geometry.target_radius + config.target_margin
    x0 = geometry.x_over_x0
    per_pair = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        try:
            pts = circle_intersections(trk[i].circle, trk[j].circle)
        except ValueError:
            return []
        if not pts and config.near_miss > 0:
            p = near_miss_point(trk[i].circle, trk[j].circle, config.near_miss)
            pts = [] if p is None else [p]
        near = []
        for p in pts:
            if math.hypot(*p) <= reach:
                s2 = 0.5 * (
                    position_sigma2(trk[i], p, x0, config.pixel_sigma)
                    + position_sigma2(trk[j], p, x0, config.pixel_sigma)
                )
                near.append((p, s2))
        if not near:
            return []
        per_pair.append(near)

    out = []
    for combo in itertools.product(*per_pair):
        pts = np.array([c[0] for c in combo])
        mu_t = vertex_2d(pts, [c[1] for c in combo])
        try:
            pca_t = [point_of_closest_approach(t.circle, mu_t) for t in trk]
        except ValueError:
            continue
        z = np.array([project_to_z(t, p) for t, p in zip(trk, pca_t)])
        s2 = np.array(
            [position_sigma2(t, p, x0, config.pixel_sigma) for t, p in zip(trk, pca_t)]
        )
        mu_z = float((z / s2).sum() / (1.0 / s2).sum())
        mu = np.array([mu_t[0], mu_t[1], mu_z])
        pca = np.column_stack([np.array(pca_t), z])
        chi2 = vertex_chi2(pca, mu, s2)
        p_tot = sum(t.momentum_at(p) for t, p in zip(trk, pca_t))
        passed = (
            chi2 <= config.chi2_vertex_max
            and math.hypot(mu_t[0], mu_t[1]) <= reach
            and float(np.linalg.norm(p_tot)) <= config.p_total_max
        )
        out.append(VertexCandidate(mu, chi2, tuple(triple), pca, p_tot, passed))
    return out


def candidate_triples(tracks):
    """(e+, e+, e-) index triples in lexicographic order, no shared hits."""
    pos = [i for i, t in enumerate(tracks) if t.kappa > 0]
    neg = [i for i, t in enumerate(tracks) if t.kappa < 0]
    for a, b in itertools.combinations(pos, 2):
        if _shares_hit(tracks[a], tracks[b]):
            continue
        for e in neg:
            if _shares_hit(tracks[a], tracks[e]) or _shares_hit(tracks[b], tracks[e]):
                continue
            yield (a, b, e)


def evaluate_frame(tracks, config, geometry, constants=PHYSICS) -> VertexDecision:
    """Keep/discard decision for a frame's accepted tracks.

    The frame is kept if any triple and intersection choice gives a vertex
    passing all three checks. The reported vertex is the lowest-chi2 passing
    one, or the overall lowest-chi2 candidate when nothing passes.
    """
    stored = [
        t
        for t in candidate_triples(tracks)
        if energy_precheck([tracks[i] for i in t], config, constants)
    ]
    if len(stored) > config.max_track_combs:
        return VertexDecision(True, "comb_overflow", len(stored))

    cands = []
    for triple in stored:
        cands.extend(triple_vertices(tracks, triple, config, geometry))
    best = None
    for c in cands:
        # strict comparison keeps the first (lexicographic) candidate on ties
        if best is None or (c.passed, -c.chi2) > (best.passed, -best.chi2):
            best = c
    keep = best is not None and best.passed
    return VertexDecision(keep, "vertex_found" if keep else "none", len(stored), best, cands)
