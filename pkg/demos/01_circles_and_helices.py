"""
Circles, signs and helices
==========================

Three hits in the transverse plane fix a circle. The signed radius tells
which way the particle turned: positive for counter-clockwise, which in a
field along +z means a positive charge.
"""
import numpy as np

from mu3e_filter.geometry import PHYSICS, DetectorGeometry, circle_radius_3pt, circumcenter_3pt
from mu3e_filter.toygen import propagate_many

geom = DetectorGeometry()
print("layer radii [mm]:", geom.layer_radii)

# three points on a 50 mm circle, walked counter-clockwise and then back
ang = np.radians([0.0, 30.0, 70.0])
pts = np.column_stack([50 * np.cos(ang), 50 * np.sin(ang), np.zeros(3)])
print("ccw radius:", circle_radius_3pt(*pts))
print("cw radius: ", circle_radius_3pt(*pts[::-1]))
print("centre:    ", circumcenter_3pt(*pts))

# a 30 MeV/c positron and electron from the target centre
p = np.array([[30.0, 0.0, 10.0], [30.0, 0.0, 10.0]])
hits = propagate_many(np.zeros((2, 3)), p, [1, -1], geom, np.random.default_rng(0), 0.0, 0.0)
r_true = 30.0 / (PHYSICS.pt_conversion * geom.b_field)
for q, h in zip((+1, -1), hits):
    print(f"\ncharge {q:+d}, expected |r| = {r_true:.2f} mm")
    for layer, xyz in enumerate(h):
        print(f"  layer {layer}: " + ("missed" if np.isnan(xyz[0]) else np.array2string(xyz, precision=3)))
    print("  radius from layers 0-2:", round(float(circle_radius_3pt(*h[:3])), 3))
