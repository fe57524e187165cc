"""Seedable toy Monte Carlo standing in for the full detector simulation.

Each frame gets a Poisson number of Michel decays, optionally one
mu -> eee signal decay, and uniformly distributed noise hits. Particles are
propagated as helices through the four layers with a Gaussian kink at every
crossed layer and pixel smearing on the cylinder surface.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .framestore import DEFAULT_CAPACITY, HIT_DTYPE, Frame, chunk_frames
from .geometry import (
    PHYSICS,
    DetectorGeometry,
    highland_sigma,
    propagate_to_cylinder,
    radius_from_pt,
)

SIGNAL_KINDS = ("signal_e+", "signal_e-")
BATCH_FRAMES = 256


@dataclass
class GenConfig:
    """Generator settings.

    ``sigma_ms=None`` uses the Highland width for each particle; a number
    fixes the width per layer crossing (0 switches scattering off).
    ``signal_fraction`` is the probability that a frame carries one signal
    decay on top of its Michel decays.

    Scattering angles are Gaussian with probability ``1 - ms_tail_fraction``
    per layer crossing and otherwise ``ms_tail_scale`` times wider, a crude
    stand-in for the single-scattering tail that the Highland core misses.
    """

    muon_rate: float = 1e8  # 1/s
    frame_length: float = 64.0  # ns
    seed: int = 0
    sigma_ms: float | None = None
    pixel_sigma: float = 0.080 / math.sqrt(12.0)  # mm
    noise_hits_per_frame: float = 1.0
    signal_fraction: float = 0.0
    ic_fraction: float = 0.0
    ic_energy_loss: float = 0.2
    ms_tail_fraction: float = 0.02
    ms_tail_scale: float = 3.0

    def __post_init__(self):
        numbers = [
            self.muon_rate,
            self.pixel_sigma,
            self.noise_hits_per_frame,
            self.signal_fraction,
            self.ic_fraction,
            self.ic_energy_loss,
            self.ms_tail_fraction,
            self.ms_tail_scale,
        ]
        if self.sigma_ms is not None:
            numbers.append(self.sigma_ms)
        if any(x < 0 for x in numbers):
            raise ValueError("rates and widths must be non-negative")
        if self.frame_length <= 0:
            raise ValueError("frame_length must be positive")
        if max(self.signal_fraction, self.ic_fraction, self.ms_tail_fraction) > 1 or self.ic_energy_loss >= 1:
            raise ValueError("fractions must lie in [0, 1]")

    @property
    def decays_per_frame(self):
        return self.muon_rate * self.frame_length * 1e-9


@dataclass
class TruthParticle:
    charge: int
    momentum: np.ndarray
    origin: np.ndarray
    kind: str
    hit_indices: list = field(default_factory=lambda: [-1, -1, -1, -1])

    def to_dict(self):
        return {
            "kind": self.kind,
            "charge": int(self.charge),
            "p": [float(v) for v in self.momentum],
            "origin": [float(v) for v in self.origin],
            "hits": [int(i) for i in self.hit_indices],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["charge"], np.array(d["p"]), np.array(d["origin"]), d["kind"], list(d["hits"])
        )

    @property
    def n_layers_hit(self):
        return sum(i >= 0 for i in self.hit_indices)


@dataclass
class TruthFrame:
    frame_id: int
    particles: list
    is_signal_frame: bool = False
    noise_per_layer: list = field(default_factory=lambda: [0, 0, 0, 0])

    def signal_particles(self):
        return [p for p in self.particles if p.kind in SIGNAL_KINDS]

    @property
    def signal_in_acceptance(self):
        """All three signal products left a hit on every layer."""
        sig = self.signal_particles()
        return len(sig) == 3 and all(p.n_layers_hit == 4 for p in sig)

    def to_json(self):
        return json.dumps(
            {
                "frame_id": self.frame_id,
                "is_signal": self.is_signal_frame,
                "noise": self.noise_per_layer,
                "particles": [p.to_dict() for p in self.particles],
            }
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            d["frame_id"],
            [TruthParticle.from_dict(p) for p in d["particles"]],
            d["is_signal"],
            d.get("noise", [0, 0, 0, 0]),
        )


def write_truth(path, truths):
    with open(path, "w") as fh:
        for t in truths:
            fh.write(t.to_json() + "\n")


def read_truth(path):
    with open(path) as fh:
        truths = [TruthFrame.from_json(line) for line in fh if line.strip()]
    return {t.frame_id: t for t in truths}


# -- kinematics ---------------------------------------------------------------


def sample_target_points(rng, geometry, n):
    r = geometry.target_radius * np.sqrt(rng.random(n))
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(-geometry.target_half_length, geometry.target_half_length, n)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _dalitz_momenta(rng, n, constants=PHYSICS):
    """(n, 3, 3) momenta of mu -> e e e at rest, flat in phase space.

    Particles 0 and 1 are the positrons, 2 the electron.
    """
    M = constants.muon_rest_energy
    m = constants.electron_mass
    lo, hi = (2 * m) ** 2, (M - m) ** 2
    s12 = np.empty(0)
    s23 = np.empty(0)
    while s12.size < n:
        k = 2 * (n - s12.size) + 16
        a = rng.uniform(lo, hi, k)
        b = rng.uniform(lo, hi, k)
        # Dalitz boundary for m23^2 at fixed m12^2
        m12 = np.sqrt(a)
        e2 = m12 / 2.0
        e3 = (M * M - a - m * m) / (2.0 * m12)
        q2 = np.sqrt(np.maximum(e2 * e2 - m * m, 0.0))
        q3 = np.sqrt(np.maximum(e3 * e3 - m * m, 0.0))
        bmin = (e2 + e3) ** 2 - (q2 + q3) ** 2
        bmax = (e2 + e3) ** 2 - (q2 - q3) ** 2
        ok = (b >= bmin) & (b <= bmax)
        s12 = np.concatenate([s12, a[ok]])
        s23 = np.concatenate([s23, b[ok]])
    s12, s23 = s12[:n], s23[:n]
    E2 = (M * M + m * m - s12) / (2 * M)  # electron (particle 2)
    E0 = (M * M + m * m - s23) / (2 * M)
    E1 = M - E0 - E2
    P = np.sqrt(np.maximum(np.stack([E0, E1, E2], -1) ** 2 - m * m, 0.0))
    p0, p1, p2 = P[:, 0], P[:, 1], P[:, 2]
    cos02 = np.clip((p1 * p1 - p0 * p0 - p2 * p2) / (2 * p0 * p2), -1.0, 1.0)
    sin02 = np.sqrt(1.0 - cos02 * cos02)
    zero = np.zeros(n)
    v0 = np.stack([zero, zero, p0], -1)
    v2 = np.stack([p2 * sin02, zero, p2 * cos02], -1)
    v1 = -(v0 + v2)
    rot = Rotation.random(n, random_state=rng)
    return np.stack([rot.apply(v0), rot.apply(v1), rot.apply(v2)], axis=1)


def michel_endpoint(constants=PHYSICS):
    M, m = constants.muon_rest_energy, constants.electron_mass
    return (M * M - m * m) / (2.0 * M)


def _isotropic(rng, n):
    cos_t = rng.uniform(-1.0, 1.0, n)
    sin_t = np.sqrt(1.0 - cos_t**2)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], -1)


def _michel_magnitudes(rng, n, constants=PHYSICS):
    """|p| with density proportional to 3x^2 - 2x^3 up to the endpoint."""
    out = np.empty(0)
    while out.size < n:
        k = 2 * (n - out.size) + 16
        x = 1.0 - rng.random(k)  # (0, 1]
        u = rng.random(k)
        out = np.concatenate([out, x[u < 3 * x * x - 2 * x**3]])
    return out[:n] * michel_endpoint(constants)


def _michel_momenta(rng, n, constants=PHYSICS):
    return _michel_magnitudes(rng, n, constants)[:, None] * _isotropic(rng, n)


def generate_signal_event(rng, origin, constants=PHYSICS):
    p = _dalitz_momenta(rng, 1, constants)[0]
    origin = np.asarray(origin, dtype=float)
    kinds = ("signal_e+", "signal_e+", "signal_e-")
    charges = (1, 1, -1)
    return [TruthParticle(q, p[i], origin.copy(), k) for i, (q, k) in enumerate(zip(charges, kinds))]


def generate_michel_positron(rng, origin, constants=PHYSICS):
    p = _michel_momenta(rng, 1, constants)[0]
    return TruthParticle(1, p, np.asarray(origin, dtype=float).copy(), "michel_e+")


# -- propagation --------------------------------------------------------------


def propagate_many(
    origins, momenta, charges, geometry, rng, sigma_ms=None, pixel_sigma=0.0, tail=(0.0, 1.0)
):
    """Propagate particles through the four layers.

    Returns an ``(n, 4, 3)`` array of measured hits; layers a particle does
    not hit are NaN. The random draws per layer do not depend on which
    particles are still alive, so results are reproducible per seed.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    momenta = np.asarray(momenta, dtype=float).reshape(-1, 3)
    charges = np.asarray(charges, dtype=float).reshape(-1)
    n = len(origins)
    hits = np.full((n, 4, 3), np.nan)
    if n == 0:
        return hits
    p = np.linalg.norm(momenta, axis=1)
    pt = np.hypot(momenta[:, 0], momenta[:, 1])
    lam = np.arctan2(momenta[:, 2], pt)
    phi = np.arctan2(momenta[:, 1], momenta[:, 0])
    alive = p > 0
    pos = origins.copy()
    for i, (L, half) in enumerate(zip(geometry.layer_radii, geometry.layer_half_lengths)):
        radius = charges * radius_from_pt(p * np.cos(lam), geometry.b_field)
        new_pos, new_phi, _, reached = propagate_to_cylinder(pos, phi, np.tan(lam), radius, L)
        alive &= reached
        inside = alive & (np.abs(new_pos[:, 2]) <= half)

        g = rng.standard_normal((4, n))
        in_tail = rng.random(n) < tail[0]
        meas = new_pos.copy()
        if pixel_sigma > 0:
            dphi = pixel_sigma * g[0] / L
            c, s = np.cos(dphi), np.sin(dphi)
            meas[:, 0] = c * new_pos[:, 0] - s * new_pos[:, 1]
            meas[:, 1] = s * new_pos[:, 0] + c * new_pos[:, 1]
            meas[:, 2] = new_pos[:, 2] + pixel_sigma * g[1]
        hits[inside, i] = meas[inside]

        sig = highland_sigma(p, geometry.x_over_x0) if sigma_ms is None else np.full(n, sigma_ms)
        sig = np.where(inside, sig, 0.0) * np.where(in_tail, tail[1], 1.0)
        d_lam = sig * g[2]
        d_phi = sig * g[3] / np.cos(lam)
        lam = np.where(alive, np.clip(lam + d_lam, -1.5, 1.5), lam)
        phi = np.where(alive, new_phi + d_phi, phi)
        pos = np.where(alive[:, None], new_pos, pos)
    return hits


def propagate_to_layers(particle, geometry, rng, sigma_ms=None, pixel_sigma=0.0, tail=(0.0, 1.0)):
    """Hits of a single particle, one entry per layer (None where missed)."""
    h = propagate_many(
        particle.origin, particle.momentum, [particle.charge], geometry, rng,
        sigma_ms, pixel_sigma, tail,
    )[0]
    return [None if np.isnan(h[i, 0]) else h[i] for i in range(4)]


# -- frames ---------------------------------------------------------------------


def generate_frames(config, geometry=None, n_frames=1, first_id=0, dtype=HIT_DTYPE):
    """Yield ``(Frame, TruthFrame)`` pairs.

    Generation is done in fixed batches so the output only depends on
    ``config`` (including its seed) and ``n_frames``.
    """
    geometry = geometry or DetectorGeometry()
    rng = np.random.default_rng(config.seed)
    mu = config.decays_per_frame
    done = 0
    while done < n_frames:
        b = min(BATCH_FRAMES, n_frames - done)
        n_dec = rng.poisson(mu, b)
        has_sig = rng.random(b) < config.signal_fraction
        is_ic = rng.random(b) < config.ic_fraction
        n_noise = rng.poisson(config.noise_hits_per_frame, b)

        n_sig = int(has_sig.sum())
        sig_origin = sample_target_points(rng, geometry, n_sig)
        sig_p = _dalitz_momenta(rng, n_sig)
        scale = np.where(is_ic[has_sig], 1.0 - config.ic_energy_loss, 1.0)
        sig_p = sig_p * scale[:, None, None]

        n_mich = int(n_dec.sum())
        mich_origin = sample_target_points(rng, geometry, n_mich)
        mich_p = _michel_momenta(rng, n_mich)

        origins = np.concatenate([np.repeat(sig_origin, 3, axis=0), mich_origin])
        momenta = np.concatenate([sig_p.reshape(-1, 3), mich_p])
        charges = np.concatenate([np.tile([1.0, 1.0, -1.0], n_sig), np.ones(n_mich)])
        hits = propagate_many(
            origins, momenta, charges, geometry, rng, config.sigma_ms, config.pixel_sigma,
            (config.ms_tail_fraction, config.ms_tail_scale),
        )

        sig_ptr = 0
        mich_ptr = 3 * n_sig
        for k in range(b):
            idx = []
            kinds = []
            if has_sig[k]:
                idx.extend(range(3 * sig_ptr, 3 * sig_ptr + 3))
                ic = bool(is_ic[k])
                kinds.extend(("ic_e+", "ic_e+", "ic_e-") if ic else ("signal_e+", "signal_e+", "signal_e-"))
                sig_ptr += 1
            idx.extend(range(mich_ptr, mich_ptr + n_dec[k]))
            kinds.extend(["michel_e+"] * int(n_dec[k]))
            mich_ptr += int(n_dec[k])
            frame, truth = _assemble_frame(
                first_id + done + k, idx, kinds, origins, momenta, charges, hits,
                int(n_noise[k]), geometry, rng, dtype,
            )
            yield frame, truth
        done += b


def _assemble_frame(frame_id, idx, kinds, origins, momenta, charges, hits, n_noise, geometry, rng, dtype):
    particles = [
        TruthParticle(int(charges[j]), momenta[j].copy(), origins[j].copy(), kind)
        for j, kind in zip(idx, kinds)
    ]
    noise_layer = rng.integers(0, 4, n_noise)
    noise_phi = rng.uniform(0.0, 2.0 * math.pi, n_noise)
    noise_u = rng.uniform(-1.0, 1.0, n_noise)
    layers = []
    noise_count = []
    for i in range(4):
        owners = [p for p, j in enumerate(idx) if not np.isnan(hits[j, i, 0])]
        pts = [hits[idx[p], i] for p in owners]
        sel = noise_layer == i
        L = geometry.layer_radii[i]
        half = geometry.layer_half_lengths[i]
        noise = np.stack(
            [L * np.cos(noise_phi[sel]), L * np.sin(noise_phi[sel]), half * noise_u[sel]], -1
        )
        noise_count.append(int(sel.sum()))
        layer = np.concatenate([np.asarray(pts, dtype=float).reshape(-1, 3), noise])
        perm = rng.permutation(len(layer))
        layer = layer[perm]
        where = np.empty(len(perm), dtype=int)
        where[perm] = np.arange(len(perm))
        for slot, p in enumerate(owners):
            particles[p].hit_indices[i] = int(where[slot])
        layers.append(layer)
    truth = TruthFrame(frame_id, particles, False, noise_count)
    truth.is_signal_frame = len(truth.signal_particles()) == 3
    return Frame.from_layers(frame_id, layers, dtype=dtype), truth


def generate_stream(config, geometry=None, n_frames=0, capacity=DEFAULT_CAPACITY):
    """Generate ``n_frames`` and pack them into chunks.

    Returns ``(chunks, truths)`` where ``chunks`` is a list of sealed chunk
    blocks and ``truths`` the matching list of :class:`TruthFrame`.
    """
    truths = []

    def frames():
        for frame, truth in generate_frames(config, geometry, n_frames):
            truths.append(truth)
            yield frame

    chunks = list(chunk_frames(frames(), capacity))
    return chunks, truths
