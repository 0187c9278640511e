"""Scaling-limit predictions.

Along the curve ``lam^2 p_{eps,z} = J`` (``lam -> inf``, ``eps -> 0``) the
spikes form a Poisson process of rate ``kappa J`` and the hitting time of
``z`` from ``x`` converges to the mixture
``(1 - alpha_xz) delta_0 + alpha_xz Exp(kappa J)``.  This module evaluates
``kappa``, ``alpha_xz``, ``q(z)`` and the related quantities, both at finite
``eps`` (through :mod:`spikesim.analytic`) and in closed or integral form
at the limit.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _quad, analytic
from ._quad import Grid
from .errors import DomainError, QuadratureError
from .model import CycleBoundaries, DiffusionModel, Family

log = logging.getLogger(__name__)

__all__ = [
    "LimitPrediction",
    "KappaEstimate",
    "kappa_numeric",
    "kappa_limit_example1",
    "kappa_limit_rabi",
    "alpha_xz",
    "q_of_z",
    "mixture_law",
    "scaling_lambda",
    "tv_bound",
    "rabi_spike_prob_asymptotic",
    "log_rabi_spike_prob_asymptotic",
    "z_eps",
    "log_z_eps",
    "zeps_diagnostic",
]


@dataclass(frozen=True)
class LimitPrediction:
    """Limit law of a hitting time: atom at 0 plus an exponential part.

    Attributes
    ----------
    kappa : float
        Inverse limiting mean cycle length.
    J : float
        Scaling-curve constant.
    alpha_xz : float
        Weight of the exponential component.
    rate : float
        Rate of the exponential component.
    """

    kappa: float
    J: float
    alpha_xz: float
    rate: float

    @property
    def atom_weight(self) -> float:
        return 1.0 - self.alpha_xz

    def survival(self, t):
        """``P(T > t)``; equal to 1 for ``t < 0``."""
        t = np.asarray(t, dtype=float)
        out = np.where(t < 0, 1.0, self.alpha_xz * np.exp(-self.rate * np.maximum(t, 0.0)))
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        """Right-continuous distribution function, with a jump of ``1 - alpha_xz`` at 0."""
        s = self.survival(t)
        return 1.0 - s


def mixture_law(kappa: float, J: float, alpha_xz: float, q_z: float | None = None) -> LimitPrediction:
    """Limit law of the hitting time.

    The rate is ``kappa J`` when the curve is calibrated at the target
    level itself and ``kappa J / q(z)`` when it is calibrated at level 1
    (pass ``q_z``).
    """
    if not (kappa > 0 and J > 0):
        raise DomainError("kappa and J must be positive")
    if not 0.0 <= alpha_xz <= 1.0:
        raise DomainError("alpha_xz must be a probability")
    rate = kappa * J if q_z is None else kappa * J / q_z
    if q_z is not None and not q_z > 0:
        raise DomainError("q(z) must be positive")
    return LimitPrediction(kappa, J, alpha_xz, rate)


# -- kappa ------------------------------------------------------------------


@dataclass(frozen=True)
class KappaEstimate:
    """Finite-``eps`` values of kappa and their extrapolation to ``eps = 0``."""

    eps: tuple
    kappa_eps: tuple
    mean: tuple
    second: tuple
    kappa: float
    error: float
    extrapolated: bool
    notes: tuple = field(default_factory=tuple)


def kappa_numeric(model: DiffusionModel, boundaries: CycleBoundaries, z: float,
                  eps_grid: Sequence[float], *, rtol: float = 1e-9,
                  fit_tol: float = 0.25) -> KappaEstimate:
    """``kappa_eps = 1/E[cycle length]`` at ``lambda = 1`` for each ``eps``.

    The limit is extrapolated with the model ``kappa_eps = kappa + c eps``
    fitted to the two smallest ``eps``.  With three or more points the fit
    is checked on the remaining ones; when the relative residual exceeds
    ``fit_tol`` (as a fraction of the total change) the smallest-``eps``
    value is reported instead and a warning is issued.

    Parameters
    ----------
    model : DiffusionModel
        Template; ``eps`` and ``lam`` are replaced.
    eps_grid : sequence of float
        Strictly decreasing.
    """
    eps = [float(e) for e in eps_grid]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise DomainError("eps_grid must be positive and strictly decreasing")
    ks, means, seconds = [], [], []
    for e in eps:
        cm = analytic.cycle_moments(model.replace(eps=e, lam=1.0), boundaries, z, rtol=rtol)
        ks.append(cm.kappa)
        means.append(cm.mean)
        seconds.append(cm.second)
    notes = []
    if len(eps) == 1:
        return KappaEstimate(tuple(eps), tuple(ks), tuple(means), tuple(seconds), ks[0],
                             math.inf, False, ("single eps: no extrapolation",))
    e1, e2 = eps[-2], eps[-1]
    k1, k2 = ks[-2], ks[-1]
    slope = (k1 - k2) / (e1 - e2)
    k0 = k2 - slope * e2
    ok = True
    if len(eps) >= 3:
        pred = k0 + slope * np.asarray(eps[:-2])
        resid = np.max(np.abs(pred - np.asarray(ks[:-2])))
        spread = abs(ks[0] - ks[-1]) or 1.0
        if resid > fit_tol * spread:
            ok = False
            msg = f"linear-in-eps fit residual {resid:.3g} exceeds {fit_tol:g} of the spread {spread:.3g}"
            notes.append(msg)
            warnings.warn(msg + "; reporting the smallest-eps value", RuntimeWarning, stacklevel=2)
    if ok:
        return KappaEstimate(tuple(eps), tuple(ks), tuple(means), tuple(seconds), k0,
                             abs(k0 - k2), True, tuple(notes))
    return KappaEstimate(tuple(eps), tuple(ks), tuple(means), tuple(seconds), k2,
                         abs(k1 - k2), False, tuple(notes))


def _log_int(logf, a, b, rtol=1e-12):
    return _quad.integrate_log(logf, a, b, rtol=rtol)[0]


def _log_triangle(log_outer, log_inner, a: float, b: float, inner_above: bool, rtol: float = 1e-12) -> float:
    """Log of ``int_a^b exp(log_outer(y)) int exp(log_inner(w)) dw dy``.

    The inner range is ``(y, b)`` when ``inner_above`` and ``(a, y)`` otherwise.
    """
    grid = Grid(_quad.linear_breaks(a, b, 8), log_coords=False)

    def ev(g):
        Li = log_inner(g.x_nodes)
        cum, _ = g.log_cumulative(Li, reverse=inner_above)
        return g.log_total(log_outer(g.x_nodes) + cum)

    def monitor(g):
        return np.stack([log_outer(g.x_nodes), log_inner(g.x_nodes)])

    max_var = _quad.MAX_VAR
    for _ in range(6):
        grid = _quad.refine(grid, monitor, max_var=max_var)
        v1, v2 = ev(grid), ev(grid.bisected())
        err = abs(math.expm1(v1 - v2))
        if err <= rtol:
            return v2
        max_var /= 2
        grid = grid.bisected()
    raise QuadratureError("nested quadrature did not converge", err)


def kappa_limit_example1(a: float, b: float, sigma_prime: float, alpha: float, beta: float) -> float:
    """Limit ``kappa`` for asymptotically linear coefficients with ``alpha(eps) = alpha eps``, ``beta(eps) = beta eps``.

    ``1/kappa = (2/s^2) int int exp(c (1/w - 1/y)) w^k / y^(k+2) dw dy`` with
    ``s = sigma_prime``, ``c = a/s^2`` and ``k = b/s^2``, over
    ``y in (0, inf)`` and ``w in (alpha, beta)``.  The domain is the union of
    four regions, two for the up-crossing and two for the down-crossing
    (see the inline comments); each is evaluated separately.
    """
    for name, v in dict(a=a, b=b, sigma_prime=sigma_prime, alpha=alpha, beta=beta).items():
        if not (v > 0 and math.isfinite(v)):
            raise DomainError(f"{name} must be positive")
    if not alpha < beta:
        raise DomainError("need alpha < beta")
    s2 = sigma_prime**2
    c, k = a / s2, b / s2

    def lw(w):  # w-factor: scaled 1/p
        return c / w + k * np.log(w)

    def ly(y):  # y-factor: scaled speed density
        return -c / y - (k + 2) * np.log(y)

    log_w_full = _log_int(lw, alpha, beta)
    # up-crossing, start below the target: y in (0, alpha), w in (alpha, beta)
    r1 = _log_int(ly, 0.0, alpha) + log_w_full
    # up-crossing, y in (alpha, beta), w in (y, beta)
    r2 = _log_triangle(ly, lw, alpha, beta, inner_above=True)
    # down-crossing, y in (alpha, beta), w in (alpha, y)
    r3 = _log_triangle(ly, lw, alpha, beta, inner_above=False)
    # down-crossing, excursion above the start: y in (beta, inf), w in (alpha, beta)
    r4 = _log_int(ly, beta, math.inf) + log_w_full
    total = math.log(2.0 / s2) + float(np.logaddexp.reduce([r1, r2, r3, r4]))
    return math.exp(-total)


def kappa_limit_rabi(b: float) -> float:
    """Limit ``kappa`` for the linearized Rabi model with the Rabi boundaries.

    ``1/kappa = 4 b^4 (int_0^1 exp(b^5 w^2/2) dw) (int_0^inf exp(-b^5 y^2/2) dy)``.
    """
    if not (b > 0 and math.isfinite(b)):
        raise DomainError("b must be positive")
    b5 = b**5
    la = _log_int(lambda w: 0.5 * b5 * w**2, 0.0, 1.0)
    lg = _log_int(lambda y: -0.5 * b5 * y**2, 0.0, math.inf)
    exact = 0.5 * math.log(math.pi / (2 * b5))
    if abs(lg - exact) > 1e-9:
        raise QuadratureError("Gaussian factor failed its closed-form check", abs(lg - exact))
    return math.exp(-(math.log(4.0) + 4 * math.log(b) + la + lg))


# -- alpha, q and the scaling curve --------------------------------------------


def alpha_xz(model: DiffusionModel, x: float, z: float, *, rtol: float = 1e-11) -> float:
    """Limit of ``P_x(T_{alpha(eps)} < T_z)``.

    Evaluated as ``int_x^z (1/p_0) / int_0^z (1/p_0)`` where ``p_0`` is the
    scale density of the unperturbed (``eps = 0``) model.  Only the
    family and shape parameters of ``model`` matter.
    """
    if not (0 < x <= z < math.inf):
        raise DomainError(f"need 0 < x <= z, got x={x}, z={z}")
    if x == z:
        return 0.0
    m0 = model.replace(eps=0.0)
    anchor = z

    def lip(y):
        return -analytic.log_scale(m0, y, anchor)

    lnum = _quad.integrate_log(lip, x, z, rtol=rtol)[0]
    lden = _quad.integrate_log(lip, 0.0, z, rtol=rtol, points=[x])[0]
    return math.exp(lnum - lden)


def q_of_z(model: DiffusionModel, z: float) -> float:
    """Rate correction ``q(z)`` for curves calibrated at level 1.

    ``q(z) = 1 - alpha_{z,1}`` for ``z <= 1`` and ``1/(1 - alpha_{1,z})`` above.
    """
    if not (z > 0 and math.isfinite(z)):
        raise DomainError("z must be positive")
    if z <= 1.0:
        return 1.0 - alpha_xz(model, z, 1.0)
    return 1.0 / (1.0 - alpha_xz(model, 1.0, z))


def scaling_lambda(model: DiffusionModel, boundaries: CycleBoundaries, z_cal: float, J: float,
                   eps: float | None = None) -> float:
    """``lambda = sqrt(J / p_{eps, z_cal})`` putting the model on the scaling curve."""
    if not J > 0:
        raise DomainError("J must be positive")
    m = model if eps is None else model.replace(eps=eps)
    lp = analytic.log_spike_prob(m, boundaries, z_cal)
    return math.exp(0.5 * (math.log(J) - lp))


def tv_bound(p: float, mean_abs_dev: float) -> float:
    """Total-variation bound ``p / (2 sqrt(1 - p)) + E|p N - kappa J T|`` for thinning a renewal process."""
    if not 0.0 <= p < 1.0:
        raise DomainError("need 0 <= p < 1")
    if not mean_abs_dev >= 0:
        raise DomainError("mean_abs_dev must be nonnegative")
    return p / (2.0 * math.sqrt(1.0 - p)) + mean_abs_dev


# -- Rabi asymptotics and Z_eps --------------------------------------------


def log_rabi_spike_prob_asymptotic(b: float, eps: float, l: float, z: float) -> float:
    """Log of ``eps^2 exp(-b^3/(6 eps^2)) int_0^l exp(b^5 x^2/2) dx / int_0^z exp(-b/(2x^2)) dx``."""
    for name, v in dict(b=b, eps=eps, z=z).items():
        if not v > 0:
            raise DomainError(f"{name} must be positive")
    if l < 0:
        raise DomainError("l must be nonnegative")
    if l == 0:
        return -math.inf
    b5 = b**5
    num = _log_int(lambda x: 0.5 * b5 * x**2, 0.0, l)
    den = _log_int(lambda x: -0.5 * b / x**2, 0.0, z)
    return 2 * math.log(eps) - b**3 / (6 * eps**2) + num - den


def rabi_spike_prob_asymptotic(b: float, eps: float, l: float, z: float) -> float:
    """Small-``eps`` equivalent of the Rabi spike probability with ``beta = eps/b + l eps^2``."""
    return math.exp(log_rabi_spike_prob_asymptotic(b, eps, l, z))


def log_z_eps(b: float, eps: float) -> float:
    """Log of ``Z_eps = int_0^inf x^-4 exp(-eps/(3x^3) + b/(2x^2)) dx``."""
    if not (b > 0 and eps > 0):
        raise DomainError("b and eps must be positive")

    def lf(x):
        return -4 * np.log(x) - eps / (3 * x**3) + b / (2 * x**2)

    return _quad.integrate_log(lf, 0.0, math.inf, rtol=1e-11, points=[eps / b])[0]


def z_eps(b: float, eps: float) -> float:
    """``Z_eps``; ``inf`` when it exceeds the double range."""
    lz = log_z_eps(b, eps)
    return math.exp(lz) if lz < 709 else math.inf


def zeps_diagnostic(b: float, eps_grid: Sequence[float], z: float = 1.0) -> list[dict]:
    """Compare the curve ``lambda^2 ~ Z_eps`` with ``lambda^2 p_{eps,z} = const``.

    Each row holds ``log Z_eps``, ``log p_{eps,z}`` (Rabi boundaries with
    ``l = 1``) and ``log(p Z)``.  When the two curves are equivalent up to a
    constant, the last column settles as ``eps`` decreases.  The Laplace
    constant that this product approaches is reported as ``log_pz_limit``.
    """
    b5 = b**5
    num = _log_int(lambda x: 0.5 * b5 * x**2, 0.0, 1.0)
    den = _log_int(lambda x: -0.5 * b / x**2, 0.0, z)
    lim = 4 * math.log(b) + 0.5 * math.log(2 * math.pi / b5) + num - den
    rows = []
    for e in eps_grid:
        m = DiffusionModel.rabi_linearized(b, eps=e)
        lp = analytic.log_spike_prob(m, CycleBoundaries.rabi(b), z)
        lz = log_z_eps(b, e)
        rows.append(dict(eps=float(e), log_z_eps=lz, log_p=lp, log_pz=lp + lz, log_pz_limit=lim))
    return rows
