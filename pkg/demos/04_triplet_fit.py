"""
Fitting a scattered triplet
===========================

The middle hit of a triplet is where the particle scattered. The fit
picks the curvature that makes the two kink angles there as small as the
expected scattering allows, then carries the track on to layer 3.
"""
import numpy as np

from mu3e_filter.geometry import PHYSICS, DetectorGeometry
from mu3e_filter.toygen import propagate_many
from mu3e_filter.tripletfit import extrapolate_to_layer3, fit_triplet

geom = DetectorGeometry()
rng = np.random.default_rng(3)

n = 5000
pt = rng.uniform(20, 50, n)
phi = rng.uniform(-np.pi, np.pi, n)
p = np.column_stack([pt * np.cos(phi), pt * np.sin(phi), rng.uniform(-15, 15, n)])
q = rng.choice([-1, 1], n)
hits = propagate_many(np.zeros((n, 3)), p, q, geom, rng)
ok = ~np.isnan(hits[:, :, 0]).any(1)
hits, pt, q = hits[ok], pt[ok], q[ok]

res = fit_triplet(hits[:, 0], hits[:, 1], hits[:, 2], None, geom)
true_kappa = q * PHYSICS.pt_conversion * geom.b_field / pt
pull = (res.kappa - true_kappa) / res.sigma_kappa
print(f"{len(hits)} tracks crossing all layers")
print(f"charge right:       {np.mean(np.sign(res.kappa) == q):.4f}")
print(f"kappa pull:         mean {pull.mean():+.3f}, std {pull.std():.3f}")
print(f"median chi2:        {np.median(res.chi2):.3f}")

pred, reached = extrapolate_to_layer3(res, hits[:, 0], hits[:, 1], hits[:, 2], geom)
miss = np.linalg.norm(pred[reached] - hits[reached, 3], axis=1)
print(f"layer-3 prediction: median miss {np.median(miss):.2f} mm, 95 % within {np.quantile(miss, 0.95):.2f} mm")
