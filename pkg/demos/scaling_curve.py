"""Quadrature-only tour of the scaling curve.

Prints, for a decreasing sequence of ``eps``, the spike probability, the
time scale ``lambda`` that keeps ``lambda**2 p = J``, the cycle rate
``kappa_eps`` and its limit, and the ratio ``p_{eps,2} / p_{eps,1}`` that
tends to ``1/q(2)``.  A second table compares the exact Rabi spike
probability with its small-``eps`` asymptotic form.  Runs in a few seconds.
"""

import math

from spikesim import analytic, limits
from spikesim.model import CycleBoundaries, DiffusionModel

J = 1.0
model = DiffusionModel.bb_linear(b=1.0)
bounds = CycleBoundaries.linear(1.0, 2.0)
kappa = limits.kappa_limit_example1(1.0, 1.0, 1.0, 1.0, 2.0)

print(f"limit kappa = {kappa:.6f}, 1/q(2) = {1 / limits.q_of_z(model, 2.0):.4f}")
print(f"{'eps':>8} {'p_eps':>12} {'lambda':>10} {'kappa_eps':>10} {'p2/p1':>8}")
for eps in (0.1, 0.05, 0.02, 0.01, 0.001):
    m = model.replace(eps=eps)
    p1 = analytic.spike_prob(m, bounds, 1.0)
    p2 = analytic.spike_prob(m, bounds, 2.0)
    lam = limits.scaling_lambda(m, bounds, 1.0, J)
    k = analytic.cycle_moments(m, bounds, 2.0).kappa
    print(f"{eps:8g} {p1:12.5e} {lam:10.4g} {k:10.6f} {p2 / p1:8.4f}")

# the Rabi spike probability is of order exp(-1/(6 eps^2))
print()
print(f"{'eps':>8} {'log p exact':>12} {'log p asym':>12} {'ratio':>8}")
rabi = DiffusionModel.rabi_linearized(b=1.0)
for eps in (0.1, 0.07, 0.05):
    lp = analytic.log_spike_prob(rabi.replace(eps=eps), CycleBoundaries.rabi(1.0, 1.0), 1.0)
    la = limits.log_rabi_spike_prob_asymptotic(1.0, eps, 1.0, 1.0)
    print(f"{eps:8g} {lp:12.4f} {la:12.4f} {math.exp(lp - la):8.4f}")
print(f"Rabi limit kappa = {limits.kappa_limit_rabi(1.0):.6f}")
