"""Stage 1: cheap geometric cuts on hit triplets from layers 0, 1 and 2.

Four tests run in a fixed order, cheapest and most selective first:

1. slope difference |tan(l12) - tan(l01)| in the (r, z) plane
2. transverse opening angle between layer 0 and layer 1 hits
3. transverse opening angle between layer 1 and layer 2 hits
4. radius of the transverse circle through all three hits

Hits are assumed to sit exactly on their layer cylinder, so the radii used
for the slopes come from the geometry, not from the hit coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import circle_radius_3pt, cos_phi

FUNNEL_STAGES = ("combinations", "delta_lambda", "phi01", "phi12", "rt")


@dataclass
class CutConfig:
    # Loose defaults that every scatter-free track crossing all four layers
    # passes; tuned values come from the threshold scan (``mu3e-filter tune``).
    delta_lambda_max: float = 0.8
    phi01_min_cos: float = 0.9
    phi12_min_cos: float = 0.25
    rt_min: float = 25.0  # mm
    rt_max: float = 250.0  # mm
    cuts_max: int = 768

    def __post_init__(self):
        if not self.rt_min < self.rt_max:
            raise ValueError("rt_min must be below rt_max")
        if self.cuts_max <= 0:
            raise ValueError("cuts_max must be positive")
        if self.delta_lambda_max < 0:
            raise ValueError("delta_lambda_max must be non-negative")
        for c in (self.phi01_min_cos, self.phi12_min_cos):
            if not -1.0 <= c <= 1.0:
                raise ValueError("minimum cosines must lie in [-1, 1]")

    @classmethod
    def vacuous(cls, cuts_max=768):
        return cls(math.inf, -1.0, -1.0, 0.0, math.inf, cuts_max)


@dataclass
class TripletCandidates:
    """Survivors of the cuts for one frame, in enumeration order.

    ``idx`` holds (i0, i1, i2) indices into the layer 0/1/2 slices of the
    frame and ``rt`` the cached signed circle radius.
    """

    idx: np.ndarray
    rt: np.ndarray
    overflow: bool = False
    funnel: tuple = (0, 0, 0, 0, 0)

    def __len__(self):
        return len(self.rt)


def pass_delta_lambda(h0, h1, h2, config, geometry):
    r0, r1, r2 = geometry.layer_radii[:3]
    dl = (h2[..., 2] - h1[..., 2]) / (r2 - r1) - (h1[..., 2] - h0[..., 2]) / (r1 - r0)
    return np.abs(dl) <= config.delta_lambda_max


def pass_phi(ht_i, ht_j, min_cos):
    # NaN from zero vectors compares False
    return cos_phi(ht_i, ht_j) >= min_cos


def pass_rt(h0, h1, h2, config):
    rt = circle_radius_3pt(h0, h1, h2)
    a = np.abs(rt)
    ok = np.isfinite(rt) & (a >= config.rt_min) & (a <= config.rt_max)
    return ok, rt


def _unit_xy(h):
    n = np.hypot(h[:, 0], h[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return h[:, :2] / n[:, None]


def select_triplets(frame, geometry, config) -> TripletCandidates:
    """Enumerate all layer-0/1/2 combinations of a frame and apply the cuts.

    Combinations are visited row-major (i0 outer, i2 inner). The first
    ``cuts_max`` survivors are kept; ``overflow`` is set when more survive.
    """
    l0 = np.asarray(frame.layer(0), dtype=float)
    l1 = np.asarray(frame.layer(1), dtype=float)
    l2 = np.asarray(frame.layer(2), dtype=float)
    n0, n1, n2 = len(l0), len(l1), len(l2)
    n_comb = n0 * n1 * n2
    if n_comb == 0:
        return TripletCandidates(np.empty((0, 3), dtype=np.int64), np.empty(0), False, (0,) * 5)
    r0, r1, r2 = geometry.layer_radii[:3]

    # pairwise tables, broadcast into the (n0, n1, n2) cube
    t01 = (l1[None, :, 2] - l0[:, None, 2]) / (r1 - r0)
    t12 = (l2[None, :, 2] - l1[:, None, 2]) / (r2 - r1)
    m_dl = np.abs(t12[None, :, :] - t01[:, :, None]) <= config.delta_lambda_max

    u0, u1, u2 = _unit_xy(l0), _unit_xy(l1), _unit_xy(l2)
    with np.errstate(invalid="ignore"):
        m01 = np.clip(u0 @ u1.T, -1.0, 1.0) >= config.phi01_min_cos
        m12 = np.clip(u1 @ u2.T, -1.0, 1.0) >= config.phi12_min_cos

    pass1 = m_dl
    pass2 = pass1 & m01[:, :, None]
    pass3 = pass2 & m12[None, :, :]
    i0, i1, i2 = np.nonzero(pass3)
    ok, rt = pass_rt(l0[i0], l1[i1], l2[i2], config)
    keep = np.flatnonzero(ok)
    funnel = (
        n_comb,
        int(pass1.sum()),
        int(pass2.sum()),
        len(i0),
        len(keep),
    )
    overflow = len(keep) > config.cuts_max
    keep = keep[: config.cuts_max]
    idx = np.stack([i0[keep], i1[keep], i2[keep]], axis=-1)
    return TripletCandidates(idx, rt[keep], overflow, funnel)
