"""Vector, circle and helix primitives plus the simplified detector model.

Units are fixed throughout the package: mm, MeV, tesla, ns.

Points are plain numpy arrays with the coordinate on the last axis, so every
function here works on a single point ``(3,)`` or on a stack ``(n, 3)``.
Transverse quantities use only the x and y components.

Sign convention for curvature: a positive signed radius (or curvature) means
the track turns counter-clockwise when viewed from +z, which is what a
positron (charge +1) does in this package.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import astuple, dataclass

import numpy as np

PT_CONVERSION = 0.299792458  # MeV/c per (T mm)
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicsConstants:
    muon_rest_energy: float = 105.6583755  # MeV
    electron_mass: float = 0.51099895  # MeV/c^2
    pt_conversion: float = PT_CONVERSION

    def __post_init__(self):
        if min(self.muon_rest_energy, self.electron_mass, self.pt_conversion) <= 0:
            raise ValueError("physics constants must be positive")


PHYSICS = PhysicsConstants()


@dataclass(frozen=True)
class DetectorGeometry:
    """Four concentric pixel cylinders around a disk-shaped target.

    ``x_over_x0`` is the material of one pixel layer in radiation lengths
    and feeds the Highland scattering width used by both the generator and
    the fits.
    """

    layer_radii: tuple = (23.3, 29.8, 73.9, 86.3)
    layer_half_lengths: tuple = (60.0, 60.0, 170.0, 180.0)
    target_radius: float = 19.0
    target_half_length: float = 50.0
    b_field: float = 1.0
    x_over_x0: float = 0.00115

    def __post_init__(self):
        radii = tuple(float(r) for r in self.layer_radii)
        halves = tuple(float(h) for h in self.layer_half_lengths)
        object.__setattr__(self, "layer_radii", radii)
        object.__setattr__(self, "layer_half_lengths", halves)
        if len(radii) != 4 or len(halves) != 4:
            raise ValueError("geometry needs exactly four layers")
        chain = (self.target_radius,) + radii
        if self.target_radius <= 0 or any(b <= a for a, b in zip(chain, chain[1:])):
            raise ValueError(
                "need 0 < target_radius < layer_radii[0] < ... < layer_radii[3]"
            )
        if any(h <= 0 for h in halves) or self.target_half_length <= 0:
            raise ValueError("half lengths must be positive")
        if self.b_field <= 0:
            raise ValueError("b_field must be positive")
        if self.x_over_x0 < 0:
            raise ValueError("x_over_x0 must be non-negative")

    def digest(self) -> str:
        """Short stable hash, written next to chunk files."""
        text = repr(astuple(self)).encode()
        return hashlib.sha256(text).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Circle2D:
    center: np.ndarray
    radius_signed: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        object.__setattr__(self, "center", c)
        if not np.all(np.isfinite(c)):
            raise ValueError("circle center must be finite")
        if not (math.isfinite(self.radius_signed) and self.radius_signed != 0):
            raise ValueError("circle radius must be finite and non-zero")

    @property
    def radius(self) -> float:
        return abs(self.radius_signed)


def tan_lambda(z_inner, r_inner, z_outer, r_outer):
    """Longitudinal slope between hits on two cylinders, (z_j - z_i)/(r_j - r_i)."""
    r_inner = np.asarray(r_inner, dtype=float)
    r_outer = np.asarray(r_outer, dtype=float)
    if np.any(r_outer <= r_inner):
        raise ValueError("outer radius must exceed inner radius")
    return (np.asarray(z_outer) - np.asarray(z_inner)) / (r_outer - r_inner)


def cos_phi(a, b):
    """Cosine of the transverse opening angle between two hits seen from the axis.

    Zero-length inputs give NaN so that any ``>=`` comparison fails closed.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    norm = np.hypot(a[..., 0], a[..., 1]) * np.hypot(b[..., 0], b[..., 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(norm > 0, dot / np.where(norm > 0, norm, 1.0), np.nan)
    return np.clip(c, -1.0, 1.0)


def circle_radius_3pt(h0, h1, h2):
    """Signed radius of the transverse circle through three hits.

    Positive when h0 -> h1 -> h2 runs counter-clockwise. Collinear points
    return ``inf`` (with the sign of the zero, which callers must ignore).
    """
    h0 = np.asarray(h0, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    ax, ay = h1[..., 0] - h0[..., 0], h1[..., 1] - h0[..., 1]
    bx, by = h2[..., 0] - h1[..., 0], h2[..., 1] - h1[..., 1]
    cross = ax * by - ay * bx
    d01 = np.hypot(ax, ay)
    d12 = np.hypot(bx, by)
    d20 = np.hypot(h0[..., 0] - h2[..., 0], h0[..., 1] - h2[..., 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        r = d01 * d12 * d20 / (2.0 * cross)
    return np.where(cross == 0, np.inf, r)


def circumcenter_3pt(p0, p1, p2):
    """Center of the circle through three transverse points.

    Raises ``ValueError`` if any of the triples is collinear.
    """
    p0 = np.asarray(p0, dtype=float)[..., :2]
    p1 = np.asarray(p1, dtype=float)[..., :2]
    p2 = np.asarray(p2, dtype=float)[..., :2]
    b = p1 - p0
    c = p2 - p0
    d = 2.0 * (b[..., 0] * c[..., 1] - b[..., 1] * c[..., 0])
    if np.any(d == 0):
        raise ValueError("collinear points have no circumcenter")
    b2 = (b * b).sum(-1)
    c2 = (c * c).sum(-1)
    ux = (c[..., 1] * b2 - b[..., 1] * c2) / d
    uy = (b[..., 0] * c2 - c[..., 0] * b2) / d
    return p0 + np.stack([ux, uy], axis=-1)


def pt_from_radius(r_t, b_field, constants=PHYSICS):
    """Transverse momentum in MeV/c of a track with radius ``r_t`` mm in ``b_field`` T."""
    r_t = np.asarray(r_t, dtype=float)
    if np.any(r_t < 0):
        raise ValueError("radius must be non-negative")
    return constants.pt_conversion * b_field * r_t


def radius_from_pt(p_t, b_field, constants=PHYSICS):
    return np.asarray(p_t, dtype=float) / (constants.pt_conversion * b_field)


def highland_sigma(p, x_over_x0, mass=PHYSICS.electron_mass):
    """Highland width of the projected scattering angle, in rad.

    13.6 MeV / (beta c p) * sqrt(x/X0) * (1 + 0.038 ln(x/X0))
    """
    p = np.asarray(p, dtype=float)
    if x_over_x0 <= 0:
        return np.zeros_like(p)
    beta = p / np.sqrt(p * p + mass * mass)
    with np.errstate(divide="ignore"):
        return (
            13.6
            / (beta * p)
            * math.sqrt(x_over_x0)
            * (1.0 + 0.038 * math.log(x_over_x0))
        )


def wrap_angle(a):
    """Map angles into [-pi, pi)."""
    return np.mod(np.asarray(a) + math.pi, TWO_PI) - math.pi


def helix_center(xy, phi, radius):
    """Transverse center of a helix passing ``xy`` with direction ``phi``."""
    xy = np.asarray(xy, dtype=float)
    return np.stack(
        [xy[..., 0] - radius * np.sin(phi), xy[..., 1] + radius * np.cos(phi)],
        axis=-1,
    )


def propagate_to_cylinder(pos, phi, tan_lam, radius, cyl_radius):
    """Move along a helix to its first forward crossing of a cylinder.

    Parameters
    ----------
    pos : (..., 3) start point
    phi : transverse direction of motion at ``pos``
    tan_lam : dz / d(transverse arc length)
    radius : signed transverse radius (positive = counter-clockwise)
    cyl_radius : radius of the cylinder around the z axis

    Returns
    -------
    new_pos, new_phi, arc, reached
        ``arc`` is the transverse path length travelled. Where ``reached`` is
        False the other outputs are NaN.
    """
    pos = np.asarray(pos, dtype=float)
    phi = np.asarray(phi, dtype=float)
    radius = np.asarray(radius, dtype=float)
    center = helix_center(pos, phi, radius)
    cc = np.hypot(center[..., 0], center[..., 1])
    gamma = np.arctan2(center[..., 1], center[..., 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (cyl_radius**2 - cc**2 - radius**2) / (2.0 * radius * cc)
    reached = np.isfinite(u) & (np.abs(u) <= 1.0)
    a = np.arcsin(np.clip(np.where(reached, u, 0.0), -1.0, 1.0))
    sgn = np.sign(radius)
    absr = np.abs(radius)
    # both solutions of sin(theta - gamma) = u, measured as forward turning angle
    turn1 = np.mod(sgn * (gamma + a - phi), TWO_PI)
    turn2 = np.mod(sgn * (gamma + math.pi - a - phi), TWO_PI)
    eps = 1e-12
    turn1 = np.where(turn1 * absr > eps, turn1, TWO_PI)
    turn2 = np.where(turn2 * absr > eps, turn2, TWO_PI)
    turn = np.minimum(turn1, turn2)
    theta = phi + sgn * turn
    arc = absr * turn
    x = center[..., 0] + radius * np.sin(theta)
    y = center[..., 1] - radius * np.cos(theta)
    z = pos[..., 2] + arc * tan_lam
    new_pos = np.stack([x, y, z], axis=-1)
    nan = np.nan
    new_pos = np.where(reached[..., None], new_pos, nan)
    return (
        new_pos,
        np.where(reached, theta, nan),
        np.where(reached, arc, nan),
        reached,
    )
