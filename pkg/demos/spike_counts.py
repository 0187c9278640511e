"""Spike counts on ``[0, T]`` along the scaling curve.

Each run simulates consecutive cycles at time scale ``lambda`` with
``lambda**2 p_eps = J`` and records the times at which the path reaches
``z``.  The counts are compared with Poisson(kappa J T).  Uses ``eps = 0.05``
and 200 runs; about half a minute on one core.
"""

import math

import numpy as np

from spikesim import analytic, limits, simulate, stats
from spikesim.model import CycleBoundaries, DiffusionModel

J, z, eps, runs = 1.0, 1.0, 0.05, 200
bounds = CycleBoundaries.linear()
base = DiffusionModel.bb_linear(b=1.0, eps=eps)
# inverse mean cycle length in the lambda = 1 clock
kappa = analytic.cycle_moments(base, bounds, z).kappa
model = base.replace(lam=limits.scaling_lambda(base, bounds, z, J))
T = 2.0 / (kappa * J)

trains = simulate.run_spike_processes(model, bounds, z, T, runs, simulate.SimConfig(rng_master_seed=2))
counts = np.array([tr.count for tr in trains])
index, p_disp = stats.poisson_dispersion(counts)
zeros = int(np.sum(counts == 0))
lo, hi = stats.binomial_ci(zeros, runs)

print(f"kappa_eps = {kappa:.4f}, horizon T = {T:.3f}, expected count {kappa * J * T:.3f}")
print(f"mean count {counts.mean():.3f}, dispersion index {index:.3f} (p = {p_disp:.3f})")
print(f"zero-spike runs {zeros / runs:.3f} [{lo:.3f}, {hi:.3f}], Poisson {math.exp(-kappa * J * T):.3f}")
print("count histogram:", np.bincount(counts).tolist())

pooled = np.concatenate([tr.times + i * T for i, tr in enumerate(trains)])
gaps = np.diff(np.concatenate([[0.0], pooled]))
ks = stats.ks_exponential(gaps, kappa * J)
print(f"{gaps.size} interarrival gaps, mean {gaps.mean():.3f} vs {1 / (kappa * J):.3f}, KS p = {ks.pvalue:.3f}")
