"""Two ways to sample a down-crossing that avoids a level.

A path from ``beta`` to ``alpha`` conditioned not to reach ``z`` can be
drawn by rejection (discard paths that reach ``z``) or directly under the
h-transformed drift.  Both are compared with the Green-kernel mean.
"""

import numpy as np

from spikesim import analytic, simulate, stats
from spikesim.model import CycleBoundaries, DiffusionModel

bounds = CycleBoundaries.linear()
model = DiffusionModel.bb_linear(b=1.0, eps=0.05)
z, n = 0.15, 3000
cfg = simulate.SimConfig(rng_master_seed=3)

rej = simulate.sample_downcross_rejection(model, bounds, z, n, cfg)
h = simulate.sample_downcross_htransform(model, bounds, z, n, cfg)
mean = analytic.conditioned_downcross_moments(model, bounds, z, 1)[0]
p = analytic.spike_prob(model, bounds, z)

print(f"probability of reaching z = {z} first: {p:.4f}; mean trials {rej['trials'].mean():.3f}"
      f" (expected {1 / (1 - p):.3f})")
for name, t in (("rejection", rej["time"]), ("h-transform", h["time"])):
    se = t.std(ddof=1) / np.sqrt(t.size)
    print(f"{name:>12}: mean {t.mean():.4f} +- {se:.4f}  (Green kernel {mean:.4f})")
print(f"highest level on the h-transform paths: {h['max_level'].max():.4f} < {z}")
print(f"two-sample KS p = {stats.ks_two_sample(rej['time'], h['time']).pvalue:.3f}")
