"""Stage 2: multiple-scattering triplet fit and 4-hit track building.

Each hit triplet is modelled as two helix arcs with a common transverse
curvature that meet at the middle hit with a kink. The kink has a
transverse part ``phi_ms`` (angle between the arc tangents at the middle
hit) and a longitudinal part ``theta_ms`` (change of the slope angle in the
arc-length/z plane). The fit minimises

    chi2(kappa) = phi_ms^2 / sigma_phi^2 + theta_ms^2 / sigma_theta^2

starting from the circle through the three hits (where phi_ms vanishes) and
taking Gauss-Newton steps with central finite-difference derivatives.

Everything here works on stacks of triplets, arrays of shape ``(n, 3)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cuts import TripletCandidates
from .geometry import (
    PHYSICS,
    Circle2D,
    DetectorGeometry,
    circle_radius_3pt,
    highland_sigma,
    propagate_to_cylinder,
    pt_from_radius,
    wrap_angle,
)

FD_STEP = 1e-6
MAX_ITER = 3
TOL = 1e-9


@dataclass
class FitConfig:
    chi2_max: float = 32.0
    max_tracks: int = 64

    def __post_init__(self):
        if self.chi2_max <= 0:
            raise ValueError("chi2_max must be positive")
        if self.max_tracks <= 0:
            raise ValueError("max_tracks must be positive")


@dataclass
class TripletFitResult:
    """Per-triplet fit output; every field is an array over triplets."""

    kappa: np.ndarray
    sigma_kappa: np.ndarray
    chi2: np.ndarray
    phi_ms: np.ndarray
    theta_ms: np.ndarray
    lambda01: np.ndarray
    lambda12: np.ndarray
    var_phi: np.ndarray
    var_theta: np.ndarray
    valid: np.ndarray


class _Triplet:
    """Chord quantities of a stack of triplets, independent of curvature."""

    def __init__(self, h0, h1, h2):
        h0 = np.asarray(h0, dtype=float)
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        self.d01 = np.hypot(h1[..., 0] - h0[..., 0], h1[..., 1] - h0[..., 1])
        self.d12 = np.hypot(h2[..., 0] - h1[..., 0], h2[..., 1] - h1[..., 1])
        self.psi01 = np.arctan2(h1[..., 1] - h0[..., 1], h1[..., 0] - h0[..., 0])
        self.psi12 = np.arctan2(h2[..., 1] - h1[..., 1], h2[..., 0] - h1[..., 0])
        self.z01 = h1[..., 2] - h0[..., 2]
        self.z12 = h2[..., 2] - h1[..., 2]

    def angles(self, kappa):
        """Kink angles and arc quantities at curvature ``kappa``.

        Outside the reachable branch (|kappa| d / 2 > 1) the result is NaN.
        """
        kappa = np.asarray(kappa, dtype=float)
        with np.errstate(invalid="ignore"):
            a01 = 2.0 * np.arcsin(kappa * self.d01 / 2.0)
            a12 = 2.0 * np.arcsin(kappa * self.d12 / 2.0)
        s01 = _arc_length(a01, kappa, self.d01)
        s12 = _arc_length(a12, kappa, self.d12)
        phi_ms = wrap_angle((self.psi12 - a12 / 2.0) - (self.psi01 + a01 / 2.0))
        lam01 = np.arctan2(self.z01, s01)
        lam12 = np.arctan2(self.z12, s12)
        return phi_ms, lam12 - lam01, lam01, lam12, a01, a12


def _arc_length(alpha, kappa, chord):
    small = np.abs(kappa * chord) < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        s = alpha / np.where(small, 1.0, kappa)
    return np.where(small, chord * (1.0 + (kappa * chord) ** 2 / 24.0), s)


def scattering_angles(h0, h1, h2, kappa):
    """Transverse and longitudinal kink angles (rad) at the middle hit."""
    phi_ms, theta_ms, *_ = _Triplet(h0, h1, h2).angles(kappa)
    if np.any(np.isnan(phi_ms) | np.isnan(theta_ms)):
        if np.ndim(phi_ms) == 0:
            raise ValueError("curvature outside the reachable branch")
    return phi_ms, theta_ms


def scattering_variances(lam01, lam12, kappa0, geometry, constants=PHYSICS):
    """Highland variances (theta, phi) at the momentum implied by ``kappa0``."""
    lam = 0.5 * (lam01 + lam12)
    with np.errstate(divide="ignore"):
        pt = pt_from_radius(1.0 / np.abs(kappa0), geometry.b_field, constants)
    p = pt / np.cos(lam)
    sigma = np.maximum(highland_sigma(p, geometry.x_over_x0, constants.electron_mass), 1e-9)
    var_theta = sigma**2
    return var_theta, var_theta / np.cos(lam) ** 2


def _chi2(trip, kappa, var_theta, var_phi):
    phi, theta, *_ = trip.angles(kappa)
    return phi**2 / var_phi + theta**2 / var_theta


def _derivatives(trip, kappa, delta):
    pp, tp, *_ = trip.angles(kappa + delta)
    pm, tm, *_ = trip.angles(kappa - delta)
    return (pp - pm) / (2 * delta), (tp - tm) / (2 * delta)


def fit_triplet(h0, h1, h2, rt_cached=None, geometry=None) -> TripletFitResult:
    """Fit the common curvature of a stack of hit triplets.

    ``rt_cached`` is the signed circle radius from the cuts (recomputed if
    omitted). Triplets that cannot be fitted come back with ``valid=False``.
    """
    geometry = geometry or DetectorGeometry()
    with np.errstate(invalid="ignore", divide="ignore"):
        return _fit_triplet(_Triplet(h0, h1, h2), h0, h1, h2, rt_cached, geometry)


def _fit_triplet(trip, h0, h1, h2, rt_cached, geometry):
    if rt_cached is None:
        rt_cached = circle_radius_3pt(h0, h1, h2)
    rt = np.asarray(rt_cached, dtype=float).reshape(np.shape(trip.d01))
    kappa0 = np.where(np.isfinite(rt), 1.0 / rt, np.nan)

    _, _, lam01_0, lam12_0, *_ = trip.angles(kappa0)
    var_theta, var_phi = scattering_variances(lam01_0, lam12_0, kappa0, geometry)
    delta = FD_STEP * np.abs(kappa0)

    kappa = kappa0.copy()
    # rows are frozen once converged so results do not depend on batching
    active = np.isfinite(kappa0)
    for _ in range(MAX_ITER):
        if not active.any():
            break
        phi, theta, *_ = trip.angles(kappa)
        dphi, dtheta = _derivatives(trip, kappa, delta)
        info = dtheta**2 / var_theta + dphi**2 / var_phi
        step = -(theta * dtheta / var_theta + phi * dphi / var_phi) / info
        step = np.where(active & np.isfinite(step), step, 0.0)
        # shrink steps that leave the reachable branch
        for _ in range(30):
            bad = (step != 0) & np.isnan(trip.angles(kappa + step)[0])
            if not bad.any():
                break
            step = np.where(bad, step / 2.0, step)
        kappa = kappa + step
        active &= np.abs(step) >= TOL * np.abs(kappa)

    phi, theta, lam01, lam12, *_ = trip.angles(kappa)
    dphi, dtheta = _derivatives(trip, kappa, delta)
    info = dtheta**2 / var_theta + dphi**2 / var_phi
    chi2 = phi**2 / var_phi + theta**2 / var_theta
    sigma_kappa = 1.0 / np.sqrt(info)
    valid = (
        np.isfinite(kappa0)
        & np.isfinite(chi2)
        & np.isfinite(sigma_kappa)
        & (sigma_kappa > 0)
        & (np.sign(kappa) == np.sign(kappa0))
    )
    return TripletFitResult(
        kappa, sigma_kappa, chi2, phi, theta, lam01, lam12, var_phi, var_theta, valid
    )


def extrapolate_to_layer3(result, h0, h1, h2, geometry):
    """Predicted layer-3 crossing of the fitted helix, continued from ``h2``.

    Returns ``(points, reached)``; unreachable rows are NaN.
    """
    trip = _Triplet(h0, h1, h2)
    kappa = result.kappa
    _, _, _, lam12, _, a12 = trip.angles(kappa)
    direction = trip.psi12 + a12 / 2.0
    with np.errstate(divide="ignore"):
        radius = 1.0 / kappa
    pts, _, _, reached = propagate_to_cylinder(
        h2, direction, np.tan(lam12), radius, geometry.layer_radii[3]
    )
    reached = reached & result.valid
    return np.where(reached[..., None], pts, np.nan), reached


@dataclass(eq=False)
class TrackCandidate:
    """A fitted 4-hit track.

    ``hits`` are the hit indices within layers 0..3 of the frame and
    ``first_hit`` the layer-0 position used as the helix anchor.
    """

    hits: tuple
    kappa: float
    chi2: float
    tan_lambda: float
    first_hit: np.ndarray
    circle: Circle2D
    b_field: float = 1.0

    @property
    def charge(self) -> int:
        return 1 if self.kappa > 0 else -1

    @property
    def lam(self):
        return math.atan(self.tan_lambda)

    @property
    def pt(self):
        return PHYSICS.pt_conversion * self.b_field / abs(self.kappa)

    @property
    def p(self):
        return self.pt * math.sqrt(1.0 + self.tan_lambda**2)

    @property
    def energy(self):
        return math.hypot(self.p, PHYSICS.electron_mass)

    def momentum_at(self, point):
        """Momentum 3-vector where the track passes the transverse ``point``."""
        e = np.asarray(point, dtype=float)[:2] - self.circle.center
        e = e / np.hypot(*e)
        t = np.sign(self.kappa) * np.array([-e[1], e[0]])
        return np.array([self.pt * t[0], self.pt * t[1], self.pt * self.tan_lambda])


def chord_circle(a, b, radius):
    """Center of the circle with signed ``radius`` through ``a`` then ``b``.

    Taken on the short arc, so the center sits to the left of the chord for
    counter-clockwise motion.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dx = b[..., 0] - a[..., 0]
    dy = b[..., 1] - a[..., 1]
    d = np.hypot(dx, dy)
    h = np.sqrt(np.maximum(radius**2 - (d / 2.0) ** 2, 0.0))
    s = np.sign(radius) * h / d
    mx = 0.5 * (a[..., 0] + b[..., 0])
    my = 0.5 * (a[..., 1] + b[..., 1])
    return np.stack([mx - s * dy, my + s * dx], axis=-1)


@dataclass
class TrackBatch:
    """Track fits for a batch of cut survivors (one row per candidate)."""

    hits: np.ndarray  # (n, 4) layer-local indices, -1 when no layer-3 hit
    kappa: np.ndarray
    chi2: np.ndarray
    tan_lambda: np.ndarray
    accepted: np.ndarray
    h0: np.ndarray
    center: np.ndarray

    def track(self, i, b_field=1.0) -> TrackCandidate:
        return TrackCandidate(
            tuple(int(v) for v in self.hits[i]),
            float(self.kappa[i]),
            float(self.chi2[i]),
            float(self.tan_lambda[i]),
            self.h0[i].copy(),
            Circle2D(self.center[i], 1.0 / float(self.kappa[i])),
            b_field,
        )


def fit_candidates(frames, candidate_sets, geometry, config) -> list:
    """Fit all cut survivors of several frames in one vectorised pass.

    Returns one :class:`TrackBatch` per frame, rows in candidate order.
    """
    sizes = [len(c) for c in candidate_sets]
    n = sum(sizes)
    if n == 0:
        return [_empty_batch() for _ in frames]
    h = [[], [], []]
    rts = []
    for frame, cands in zip(frames, candidate_sets):
        if not len(cands):
            continue
        for layer in range(3):
            h[layer].append(np.asarray(frame.layer(layer), dtype=float)[cands.idx[:, layer]])
        rts.append(cands.rt)
    h0, h1, h2 = (np.concatenate(x) for x in h)
    rt = np.concatenate(rts)

    first = fit_triplet(h0, h1, h2, rt, geometry)
    pred, reached = extrapolate_to_layer3(first, h0, h1, h2, geometry)

    i3 = np.full(n, -1, dtype=np.int64)
    h3 = np.full((n, 3), np.nan)
    start = 0
    for frame, size in zip(frames, sizes):
        if size:
            l3 = np.asarray(frame.layer(3), dtype=float)
            if len(l3):
                sl = slice(start, start + size)
                d2 = ((pred[sl, None, :] - l3[None, :, :]) ** 2).sum(-1)
                d2 = np.where(np.isnan(d2), np.inf, d2)
                best = np.argmin(d2, axis=1)
                ok = reached[sl]
                i3[sl] = np.where(ok, best, -1)
                h3[sl] = np.where(ok[:, None], l3[best], np.nan)
        start += size

    has3 = i3 >= 0
    second = fit_triplet(h1, h2, h3, None, geometry)
    ok = first.valid & second.valid & has3 & (np.sign(first.kappa) == np.sign(second.kappa))

    w1 = 1.0 / first.sigma_kappa**2
    w2 = 1.0 / second.sigma_kappa**2
    with np.errstate(invalid="ignore"):
        kbar = (first.kappa * w1 + second.kappa * w2) / (w1 + w2)
        chi2 = _chi2(_Triplet(h0, h1, h2), kbar, first.var_theta, first.var_phi) + _chi2(
            _Triplet(h1, h2, h3), kbar, second.var_theta, second.var_phi
        )
    ok &= np.isfinite(chi2)
    accepted = ok & (chi2 < config.chi2_max)

    _, _, lam01, *_ = _Triplet(h0, h1, h2).angles(kbar)
    with np.errstate(divide="ignore", invalid="ignore"):
        center = chord_circle(h0, h1, 1.0 / kbar)
    idx = np.concatenate([c.idx for c in candidate_sets if len(c)])
    hits = np.concatenate([idx, i3[:, None]], axis=1)

    out = []
    start = 0
    for size in sizes:
        sl = slice(start, start + size)
        out.append(
            TrackBatch(
                hits[sl], kbar[sl], chi2[sl], np.tan(lam01[sl]), accepted[sl], h0[sl], center[sl]
            )
        )
        start += size
    return out


def _empty_batch():
    z = np.empty(0)
    return TrackBatch(
        np.empty((0, 4), dtype=np.int64), z, z, z, np.empty(0, dtype=bool),
        np.empty((0, 3)), np.empty((0, 2)),
    )


def fit_track(triplet_idx, rt, frame, geometry, config):
    """Fit a single cut survivor; returns a TrackCandidate or None if rejected."""
    cands = TripletCandidates(np.asarray([triplet_idx]), np.asarray([rt], dtype=float))
    batch = fit_candidates([frame], [cands], geometry, config)[0]
    if not batch.accepted[0]:
        return None
    return batch.track(0, geometry.b_field)
