"""
Tuning the triplet cuts
=======================

Each of the four cuts is placed at a quantile of the true-triplet
distribution, all at the same loss, and the common loss is bisected until
98.5 % of true triplets survive all four. The funnel then shows how many
combinations each stage lets through.
"""
import numpy as np

from mu3e_filter.cuts import FUNNEL_STAGES, select_triplets
from mu3e_filter.geometry import DetectorGeometry
from mu3e_filter.toygen import GenConfig, generate_frames
from mu3e_filter.tuning import tune_cuts

geom = DetectorGeometry()

train = list(generate_frames(GenConfig(seed=1), geom, 5000))
res = tune_cuts([f for f, _ in train], {t.frame_id: t for _, t in train}, geom, 0.985)
print(f"retention on the tuning sample: {res.achieved:.4f} from {res.n_samples} true triplets")
print(res.config)

funnel = np.zeros(5, dtype=np.int64)
for frame, _ in generate_frames(GenConfig(seed=2), geom, 5000):
    funnel += select_triplets(frame, geom, res.config).funnel
print()
for name, n in zip(FUNNEL_STAGES, funnel):
    print(f"{name:<14}{n:>10}{100 * n / funnel[0]:>9.2f}%")
