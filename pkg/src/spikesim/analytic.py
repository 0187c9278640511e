"""Scale function, speed measure, Green kernels and exit-time moments.

For the generator ``L = (lam^2/2) sigma^2 d^2 + (lam^2/2)(eps b1 - b2) d`` the
scale density ``p`` and speed density ``r`` are

.. math::

    \\log p_c(x) = \\int_c^x \\frac{\\varepsilon b_1 - b_2}{\\sigma^2}\\,dl,
    \\qquad r(x) = \\frac{p(x)}{\\lambda^2 \\sigma^2(x)} .

Hitting probabilities are ratios of integrals of ``1/p``; exit-time moments
follow from Green kernels ``g`` via ``E_x[T^k] = k int g(x, y) E_y[T^{k-1}] r(y) dy``.

Everything is computed in log space on a shared panel grid (see
:mod:`spikesim._quad`), so integrands spanning hundreds of orders of magnitude
are handled without overflow.  Each public routine compares the result on
its adaptive grid with the result on the uniformly bisected grid and raises
:class:`~spikesim.errors.QuadratureError` when the two disagree by more
than the requested relative tolerance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _quad
from ._quad import Grid
from .errors import DomainError, QuadratureError
from .model import CycleBoundaries, DiffusionModel, Family

__all__ = [
    "KernelKind",
    "ScaleObjects",
    "GreenKernel",
    "HTransformModel",
    "CycleMoments",
    "log_scale",
    "scale_density_log",
    "hitting_prob",
    "spike_prob",
    "green_kernel",
    "expected_exit_time",
    "exit_time_second_moment",
    "exit_time_moments",
    "h_transform",
    "log_invp_tail",
    "log_spike_prob",
    "conditioned_downcross_moments",
    "cycle_moments",
]

DEFAULT_RTOL = 1e-9
GRADE_LEVELS = 30     # geometric grading toward an endpoint where h vanishes
_LOG2 = math.log(2.0)


class KernelKind(enum.Enum):
    """Which ends of the interval absorb.

    ``TwoAbsorbing`` absorbs at both ends.  ``UpperAbsorbing`` absorbs only
    at the right end; the left end is natural (``0``) or reflecting.
    ``LowerAbsorbing`` is the mirror image.
    """

    TwoAbsorbing = "TwoAbsorbing"
    UpperAbsorbing = "UpperAbsorbing"
    LowerAbsorbing = "LowerAbsorbing"


# -- scale density ---------------------------------------------------------


def log_scale(model: DiffusionModel, x, anchor: float = 1.0, rtol: float = 1e-12) -> np.ndarray:
    """``log p_c(x)`` at the points ``x``.

    Presets use the exact antiderivative.  Custom models integrate
    ``(eps b1 - b2)/sigma^2`` numerically with composite Gauss-Legendre
    panels in ``log x``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("the scale density is defined on x > 0")
    closed = model.log_scale_closed(x, anchor)
    if closed is not None:
        return closed
    return _log_scale_numeric(model, x, anchor, rtol)


def _log_scale_numeric(model: DiffusionModel, x: np.ndarray, anchor: float, atol: float) -> np.ndarray:
    if not (anchor > 0 and math.isfinite(anchor)):
        raise DomainError("custom models need a finite positive anchor")
    flat = x.ravel()
    t_pts = np.log(np.concatenate([flat, [anchor]]))
    uniq = np.unique(t_pts)
    if uniq.size == 1:
        return np.zeros_like(x)
    # fill wide gaps so that no panel spans more than a factor 1.1 in x
    fill = [uniq]
    gaps = np.diff(uniq)
    for lo, g in zip(uniq[:-1][gaps > 0.095], gaps[gaps > 0.095]):
        fill.append(lo + g * np.arange(1, int(math.ceil(g / 0.095))) / math.ceil(g / 0.095))
    grid = Grid(np.unique(np.concatenate(fill)), log_coords=True)
    f = model.scale_integrand
    prev = None
    for _ in range(10):
        _, at_b = grid.cumulative_signed(f(grid.x_nodes))
        g2 = grid.bisected()
        _, at_b2 = g2.cumulative_signed(f(g2.x_nodes))
        at_b2 = at_b2[::2]
        err = np.max(np.abs(at_b2 - at_b) / np.maximum(1.0, np.abs(at_b2)))
        if err <= atol:
            prev = at_b2
            break
        grid = g2
    if prev is None:
        raise QuadratureError("scale density integral did not converge", float(err))
    # every query point is a breakpoint of the grid
    vals = prev[grid.break_indices(np.exp(t_pts))]
    vals = vals - vals[-1]
    return vals[:-1].reshape(x.shape)


def _log_fields(model: DiffusionModel, x: np.ndarray, anchor: float):
    """``(log 1/p, log r)`` at ``x``."""
    lp = log_scale(model, x, anchor)
    lr = lp - 2.0 * math.log(model.lam) - 2.0 * np.log(model.sigma(x))
    return -lp, lr


@dataclass(frozen=True)
class ScaleObjects:
    """Log scale density normalized at an anchor.

    Attributes
    ----------
    model : DiffusionModel
    anchor : float
        ``c`` with ``p_c(c) = 1``.
    quadrature_tol : float
        Absolute tolerance on ``log p`` for the numeric route.
    """

    model: DiffusionModel
    anchor: float
    quadrature_tol: float = 1e-12

    def log_scale_density(self, x):
        return log_scale(self.model, x, self.anchor, self.quadrature_tol)

    def inv_p(self, x):
        """``1/p_c(x)``, the derivative of the scale function."""
        return np.exp(-self.log_scale_density(x))

    def log_speed_density(self, x):
        """``log r(x)`` with ``r = p / (lam^2 sigma^2)``."""
        x = np.asarray(x, dtype=float)
        lam = self.model.lam
        return self.log_scale_density(x) - 2 * math.log(lam) - 2 * np.log(self.model.sigma(x))


def scale_density_log(model: DiffusionModel, anchor: float = 1.0, quadrature_tol: float = 1e-12) -> ScaleObjects:
    """Scale objects of ``model`` anchored at ``anchor``.

    Examples
    --------
    >>> m = DiffusionModel.bb_linear(b=1.0, eps=0.0)
    >>> float(scale_density_log(m, 1.0).inv_p(2.0))
    2.0
    """
    if not anchor > 0:
        raise DomainError("anchor must be positive")
    return ScaleObjects(model, float(anchor), quadrature_tol)


# -- grids -------------------------------------------------------------------


@dataclass
class _Setup:
    """Panel grid for an interval together with the log fields on it."""

    grid: Grid
    invp: np.ndarray       # log 1/p at nodes
    invp_b: np.ndarray     # ... at breaks
    r: np.ndarray          # log r at nodes
    r_b: np.ndarray
    sliver: float          # width of an excluded sliver at the right end (h-case)
    trunc_lo: bool
    trunc_hi: bool


def _fields_on(model: DiffusionModel, grid: Grid, anchor: float):
    invp, r = _log_fields(model, grid.x_nodes, anchor)
    invp_b, r_b = _log_fields(model, grid.x_breaks, anchor)
    return invp, invp_b, r, r_b


def _make_setup(model: DiffusionModel, lo: float, hi: float, points: Sequence[float],
                grade_hi: bool = False, need_r: bool = True, bisect: int = 0,
                max_var: float = _quad.MAX_VAR) -> _Setup:
    """Build and refine a grid on ``[lo, hi]``.

    ``lo = 0`` or ``hi = inf`` are truncated where ``x r(x)`` has decayed
    below its peak by ``DROP_NATS``.  With ``grade_hi`` the grid is graded
    geometrically toward a finite ``hi`` and stops a sliver short of it.
    """
    finite = [p for p in list(points) + [lo, hi] if 0 < p < math.inf]
    anchor = max(finite) if finite else 1.0

    def log_xr(t):
        x = np.exp(t)
        return _log_fields(model, x, anchor)[1] + t

    t_lo = math.log(lo) if lo > 0 else None
    t_hi = math.log(hi) if math.isfinite(hi) else None
    if t_lo is None:
        t_lo = _quad.find_cutoff(log_xr, math.log(min(finite)), -1)
    if t_hi is None:
        t_hi = _quad.find_cutoff(log_xr, math.log(max(finite)), +1)

    sliver = 0.0
    extra = [p for p in points if 0 < p < math.inf]
    if grade_hi:
        d = 0.5 * (hi - max([p for p in points if p < hi], default=lo))
        sliver = d * 2.0**-GRADE_LEVELS
        extra += [hi - d * 2.0**-k for k in range(1, GRADE_LEVELS + 1)]
        t_hi = math.log(hi - sliver)
    breaks = _quad.geometric_breaks(math.exp(t_lo), math.exp(t_hi), 1.5, extra)

    while True:
        grid = Grid(breaks, log_coords=True)

        def monitor(g):
            invp, r = _log_fields(model, g.x_nodes, anchor)
            mons = [invp + g.log_jac]
            if need_r:
                mons.append(r + g.log_jac)
            return np.stack(mons)

        grid = _quad.refine(grid, monitor, max_var=max_var)
        if need_r and (lo == 0 or math.isinf(hi)):
            # make sure the truncation is deep relative to the global peak
            lx = log_xr(grid.nodes)
            peak = float(np.max(lx))
            moved = False
            if lo == 0 and np.max(lx[0]) > peak - _quad.DROP_NATS:
                breaks = np.concatenate([[grid.breaks[0] - 4 * math.log(8.0)], grid.breaks])
                moved = True
            if math.isinf(hi) and np.max(lx[-1]) > peak - _quad.DROP_NATS:
                breaks = np.concatenate([grid.breaks, [grid.breaks[-1] + 4 * math.log(8.0)]])
                moved = True
            if moved:
                continue
        break
    for _ in range(bisect):
        grid = grid.bisected()
    invp, invp_b, r, r_b = _fields_on(model, grid, anchor)
    return _Setup(grid, invp, invp_b, r, r_b, sliver, lo == 0, math.isinf(hi))


def _converged(evaluate: Callable[[int, float], float], rtol: float, what: str,
               extra_err: Callable[[int], float] | None = None) -> tuple[float, float]:
    """Evaluate a log quantity at increasing resolution until it settles.

    ``evaluate(level, max_var)`` returns the log value on a grid refined to
    ``max_var`` and bisected ``level`` times.
    """
    max_var = _quad.MAX_VAR
    v1 = evaluate(0, max_var)
    for _ in range(4):
        v2 = evaluate(1, max_var)
        if not math.isfinite(v2) and v2 == v1:
            return v2, 0.0
        err = abs(math.expm1(v1 - v2)) + 1e-14
        if err <= rtol:
            return v2, err
        max_var /= 2
        v1 = evaluate(0, max_var)
    raise QuadratureError(f"{what}: quadrature did not reach rtol={rtol}", err,
                          math.exp(v2) if v2 < 700 else math.inf)


# -- hitting probabilities ------------------------------------------------


def _log_invp_partial(model: DiffusionModel, lo: float, hi: float, x: float,
                      level: int, max_var: float) -> tuple[float, float]:
    """``(log int_lo^x 1/p, log int_x^hi 1/p)`` on a grid of resolution ``level``."""
    s = _make_setup(model, lo, hi, [x], need_r=False, bisect=level, max_var=max_var)
    g = s.grid
    _, fb = g.log_cumulative(s.invp)
    i = g.break_index(x)
    _, rb = g.log_cumulative(s.invp, reverse=True)
    return float(fb[i]), float(rb[i])


def hitting_prob(model: DiffusionModel, x: float, r: float, R: float, *,
                 rtol: float = DEFAULT_RTOL, return_error: bool = False):
    """Probability ``P_x(T_R < T_r)`` of leaving ``[r, R]`` through ``R``.

    Equals ``int_r^x (1/p) / int_r^R (1/p)``; independent of ``lambda``.

    Raises
    ------
    DomainError
        Unless ``0 < r <= x <= R`` with ``r < R``.
    """
    if not (0 < r <= x <= R) or not r < R or not math.isfinite(R):
        raise DomainError(f"need 0 < r <= x <= R < inf with r < R, got r={r}, x={x}, R={R}")
    if x == r:
        return (0.0, 0.0) if return_error else 0.0
    if x == R:
        return (1.0, 0.0) if return_error else 1.0

    def ev(level, mv):
        a, b = _log_invp_partial(model, r, R, x, level, mv)
        return a - np.logaddexp(a, b)

    lv, err = _converged(ev, rtol, "hitting_prob")
    val = math.exp(lv)
    return (val, err) if return_error else val


def spike_prob(model: DiffusionModel, boundaries: CycleBoundaries, z: float, *,
               rtol: float = DEFAULT_RTOL, return_error: bool = False):
    """Probability that a cycle started at ``beta(eps)`` reaches ``z`` before ``alpha(eps)``."""
    alpha, beta = boundaries.at(model.eps)
    if not z >= beta:
        raise DomainError(f"need z >= beta(eps)={beta}, got z={z}")
    return hitting_prob(model, beta, alpha, z, rtol=rtol, return_error=return_error)


def log_spike_prob(model: DiffusionModel, boundaries: CycleBoundaries, z: float, *,
                   rtol: float = DEFAULT_RTOL) -> float:
    """Natural log of :func:`spike_prob`; usable when the probability underflows."""
    alpha, beta = boundaries.at(model.eps)
    if not z > beta:
        raise DomainError(f"need z > beta(eps)={beta}, got z={z}")

    def ev(level, mv):
        a, b = _log_invp_partial(model, alpha, z, beta, level, mv)
        return a - np.logaddexp(a, b)

    return _converged(ev, rtol, "spike_prob")[0]


# -- Green kernels -------------------------------------------------------------


def _check_domain(domain, kind: KernelKind) -> tuple[float, float]:
    lo, hi = float(domain[0]), float(domain[1])
    if not (0 <= lo < hi):
        raise DomainError(f"degenerate interval ({lo}, {hi})")
    if kind is KernelKind.TwoAbsorbing and not (lo > 0 and math.isfinite(hi)):
        raise DomainError("two absorbing ends must lie in (0, inf)")
    if kind is KernelKind.UpperAbsorbing and not math.isfinite(hi):
        raise DomainError("the absorbing upper end must be finite")
    if kind is KernelKind.LowerAbsorbing and not lo > 0:
        raise DomainError("the absorbing lower end must be positive")
    return lo, hi


@dataclass(frozen=True)
class GreenKernel:
    """Green kernel of the generator on an interval.

    ``g(x, y) = (2/K) u(x ^ y) v(x v y)`` where ``u(x) = int_lo^x 1/p`` (or 1
    when the lower end does not absorb), ``v(x) = int_x^hi 1/p`` (or 1 when
    the upper end does not absorb) and ``K = int_lo^hi 1/p`` for two
    absorbing ends, ``K = 1`` otherwise.  The scale density is normalized at
    ``anchor`` (the upper end when finite, else the lower end), and with the
    matching speed density :meth:`log_speed`
    ``E_x[int_0^T f(X_s) ds] = int g(x, y) f(y) r(y) dy``.
    """

    model: DiffusionModel
    domain: tuple
    kind: KernelKind
    rtol: float = DEFAULT_RTOL
    anchor: float = 1.0

    def _log_int(self, a: float, b: float) -> float:
        # integrals come back normalized at their right end b; move them to the anchor
        return _log_integral_invp(self.model, a, b, self.rtol) + float(log_scale(self.model, self.anchor, b))

    def _log_uv(self, x) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.domain
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < lo) or np.any(x > hi):
            raise DomainError("point outside the kernel's domain")
        lu = np.zeros_like(x)
        lv = np.zeros_like(x)
        for i, xi in enumerate(x):
            if self.kind is not KernelKind.UpperAbsorbing:
                lu[i] = -np.inf if xi == lo else self._log_int(lo, xi)
            if self.kind is not KernelKind.LowerAbsorbing:
                lv[i] = -np.inf if xi == hi else self._log_int(xi, hi)
        return lu, lv

    @property
    def log_normalizer(self) -> float:
        if self.kind is KernelKind.TwoAbsorbing:
            return self._log_int(*self.domain)
        return 0.0

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    def u(self, x):
        return np.exp(self._log_uv(x)[0])

    def v(self, x):
        return np.exp(self._log_uv(x)[1])

    def log_g(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        small, large = np.minimum(x, y).ravel(), np.maximum(x, y).ravel()
        lu, _ = self._log_uv(small)
        _, lv = self._log_uv(large)
        out = _LOG2 - self.log_normalizer + lu + lv
        return out.reshape(x.shape)

    def g(self, x, y):
        out = np.exp(self.log_g(x, y))
        return float(out) if out.ndim == 0 else out

    def log_speed(self, y):
        """``log r(y)`` under the kernel's normalization of the scale density."""
        return scale_density_log(self.model, self.anchor).log_speed_density(y)


def _log_integral_invp(model, a, b, rtol):
    if a == b:
        return -np.inf

    def ev(level, mv):
        s = _make_setup(model, a, b, [], need_r=False, bisect=level, max_var=mv)
        return s.grid.log_total(s.invp)

    return _converged(ev, rtol, "scale function")[0]


def green_kernel(model: DiffusionModel, domain, kind: KernelKind | str = KernelKind.TwoAbsorbing,
                 rtol: float = DEFAULT_RTOL) -> GreenKernel:
    """Green kernel of ``model`` on ``domain`` with the given absorbing ends."""
    kind = KernelKind(kind) if not isinstance(kind, KernelKind) else kind
    lo, hi = _check_domain(domain, kind)
    anchor = hi if math.isfinite(hi) else lo
    return GreenKernel(model, (lo, hi), kind, rtol, anchor)


def _green_apply(grid: Grid, Lu, Lu_b, Lv, Lv_b, logC: float, Lf):
    """Log of ``int g(x, y) f(y) dy`` at nodes and breaks.

    ``Lu, Lv`` are log u, log v (zeros for an identically-one solution).
    """
    A_n, A_b = grid.log_cumulative(Lu + Lf)
    B_n, B_b = grid.log_cumulative(Lv + Lf, reverse=True)
    with np.errstate(invalid="ignore"):
        nodes = logC + np.logaddexp(Lv + A_n, Lu + B_n)
        breaks = logC + np.logaddexp(Lv_b + A_b, Lu_b + B_b)
    return nodes, breaks


def _kernel_solutions(s: _Setup, kind: KernelKind, lo_absorbs: bool, hi_absorbs: bool):
    """log u, log v at nodes and breaks plus log of the prefactor."""
    g = s.grid
    zero_n, zero_b = np.zeros_like(s.invp), np.zeros(g.breaks.size)
    if lo_absorbs:
        Lu, Lu_b = g.log_cumulative(s.invp)
    else:
        Lu, Lu_b = zero_n, zero_b
    if hi_absorbs:
        Lv, Lv_b = g.log_cumulative(s.invp, reverse=True)
    else:
        Lv, Lv_b = zero_n, zero_b
    logC = _LOG2
    if lo_absorbs and hi_absorbs:
        logC -= float(Lu_b[-1])
    return Lu, Lu_b, Lv, Lv_b, logC


def _log_moments_on(s: _Setup, kind: KernelKind, kmax: int, Lr=None, Lr_b=None,
                    sol=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Log exit-time moments ``m_1..m_kmax`` at nodes and breaks (Kac recursion)."""
    lo_abs = kind in (KernelKind.TwoAbsorbing, KernelKind.LowerAbsorbing)
    hi_abs = kind in (KernelKind.TwoAbsorbing, KernelKind.UpperAbsorbing)
    Lu, Lu_b, Lv, Lv_b, logC = sol if sol is not None else _kernel_solutions(s, kind, lo_abs, hi_abs)
    Lr = s.r if Lr is None else Lr
    out = []
    Lf = Lr
    for k in range(1, kmax + 1):
        mn, mb = _green_apply(s.grid, Lu, Lu_b, Lv, Lv_b, logC + math.log(k), Lf)
        out.append((mn, mb))
        Lf = mn + Lr
    return out


def exit_time_moments(model: DiffusionModel, start: float, domain, kind: KernelKind | str,
                      kmax: int = 2, *, rtol: float = DEFAULT_RTOL, return_error: bool = False):
    """``(E[T], ..., E[T^kmax])`` for the exit time of ``domain`` from ``start``.

    Parameters
    ----------
    model : DiffusionModel
    start : float
        Starting point inside ``domain``.
    domain : (float, float)
        Interval; a lower end of ``0`` or an upper end of ``inf`` is a
        natural boundary and must belong to a non-absorbing side.
    kind : KernelKind
        Which ends absorb.  A finite non-absorbing end acts as a reflecting barrier.

    Raises
    ------
    QuadratureError
        If an improper integral diverges (for instance when 0 is not
        integrable for the speed measure) or the tolerance is not met.
    """
    kind = KernelKind(kind) if not isinstance(kind, KernelKind) else kind
    lo, hi = _check_domain(domain, kind)
    if not lo <= start <= hi:
        raise DomainError(f"start={start} outside [{lo}, {hi}]")
    lo_abs = kind in (KernelKind.TwoAbsorbing, KernelKind.LowerAbsorbing)
    hi_abs = kind in (KernelKind.TwoAbsorbing, KernelKind.UpperAbsorbing)
    if (lo_abs and start == lo) or (hi_abs and start == hi):
        zeros = tuple(0.0 for _ in range(kmax))
        return (zeros, tuple(0.0 for _ in range(kmax))) if return_error else zeros

    results = {}

    def ev_k(k):
        def ev(level, mv):
            key = (level, mv)
            if key not in results:
                s = _make_setup(model, lo, hi, [start], bisect=level, max_var=mv)
                i = s.grid.break_index(start)
                results[key] = [float(mb[i]) for _, mb in _log_moments_on(s, kind, kmax)]
            return results[key][k]
        return ev

    vals, errs = [], []
    for k in range(kmax):
        lv, e = _converged(ev_k(k), rtol, f"exit-time moment {k + 1}")
        vals.append(math.exp(lv))
        errs.append(e)
    return (tuple(vals), tuple(errs)) if return_error else tuple(vals)


def expected_exit_time(model: DiffusionModel, start: float, domain, kind: KernelKind | str, *,
                       rtol: float = DEFAULT_RTOL) -> float:
    """``E_start[T]`` via ``int g(start, y) r(y) dy``; scales as ``lambda**-2``."""
    return exit_time_moments(model, start, domain, kind, 1, rtol=rtol)[0]


def exit_time_second_moment(model: DiffusionModel, start: float, domain, kind: KernelKind | str, *,
                            rtol: float = DEFAULT_RTOL) -> float:
    """``E_start[T^2] = 2 int g(start, y) E_y[T] r(y) dy``."""
    return exit_time_moments(model, start, domain, kind, 2, rtol=rtol)[1]


# -- h-transform -------------------------------------------------------------


def _h_setup(model: DiffusionModel, lower: float, upper: float, points: Sequence[float],
             level: int, max_var: float):
    """Grid on ``[lower, upper)`` with log h and the transformed fields."""
    s = _make_setup(model, lower, upper, points, grade_hi=True, bisect=level, max_var=max_var)
    g = s.grid
    # mass of 1/p inside the excluded sliver next to `upper`; the setup's
    # fields are anchored at `upper`, where log(1/p) = 0
    log_init = math.log(s.sliver)
    Vn, Vb = g.log_cumulative(s.invp, reverse=True, log_init=log_init)
    logK = float(Vb[0])
    return s, Vn - logK, Vb - logK, logK


def log_invp_tail(model: DiffusionModel, lower: float, upper: float, x, *,
                  rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """``log int_x^upper (1/p)`` for many points ``x`` in ``(lower, upper)``, anchored at ``upper``.

    Uses one graded grid with the points as breakpoints, so the result is
    accurate in relative terms even very close to ``upper``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= lower) or np.any(x >= upper):
        raise DomainError("points must lie strictly inside (lower, upper)")
    pts = np.unique(x)

    def run(level, mv):
        s = _make_setup(model, lower, upper, list(pts), grade_hi=True, need_r=False, bisect=level, max_var=mv)
        _, Vb = s.grid.log_cumulative(s.invp, reverse=True, log_init=math.log(s.sliver))
        return Vb[s.grid.break_indices(pts)]

    a = run(0, _quad.MAX_VAR)
    b = run(1, _quad.MAX_VAR)
    err = float(np.max(np.abs(np.expm1(a - b))))
    if err > rtol:
        raise QuadratureError("tail integrals of the scale density did not converge", err)
    return b[np.searchsorted(pts, x)]


def _conditioned_moments(model: DiffusionModel, lower: float, upper: float, start: float,
                         kmax: int, level: int, max_var: float) -> list[float]:
    s, Lh, Lh_b, _ = _h_setup(model, lower, upper, [start], level, max_var)
    g = s.grid
    invp_h, invp_h_b = s.invp - 2 * Lh, s.invp_b - 2 * Lh_b
    r_h, r_h_b = s.r + 2 * Lh, s.r_b + 2 * Lh_b
    Lu, Lu_b = g.log_cumulative(invp_h)
    zn, zb = np.zeros_like(Lu), np.zeros_like(Lu_b)
    sol = (Lu, Lu_b, zn, zb, _LOG2)
    hs = _Setup(g, invp_h, invp_h_b, r_h, r_h_b, s.sliver, False, False)
    i = g.break_index(start)
    return [float(mb[i]) for _, mb in _log_moments_on(hs, KernelKind.LowerAbsorbing, kmax, sol=sol)]


@dataclass(frozen=True)
class HTransformModel:
    """The diffusion conditioned to reach ``lower`` before ``upper``.

    ``h(x) = int_x^upper (1/p) / int_lower^upper (1/p)`` is the probability of
    that event from ``x``.  The conditioned process has scale density
    ``p^h = p h^2``, speed density ``r^h = r h^2`` and drift
    ``drift(x) + lam^2 sigma(x)^2 h'(x)/h(x)``.
    """

    base: DiffusionModel
    lower: float
    upper: float
    rtol: float = DEFAULT_RTOL

    def _check(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < self.lower) or np.any(x > self.upper):
            raise DomainError(f"points must lie in [{self.lower}, {self.upper}]")
        return x

    def log_h(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            if xi == self.lower:
                out[i] = 0.0
            elif xi == self.upper:
                out[i] = -np.inf
            else:
                def ev(level, mv, xi=xi):
                    a, b = _log_invp_partial(self.base, self.lower, self.upper, xi, level, mv)
                    return b - np.logaddexp(a, b)
                out[i] = _converged(ev, self.rtol, "h")[0]
        return out

    def h(self, x) -> np.ndarray:
        return np.exp(self.log_h(x))

    def log_ph(self, x, anchor: float = 1.0) -> np.ndarray:
        x = self._check(x)
        with np.errstate(divide="ignore"):
            return log_scale(self.base, x, anchor) + 2 * self.log_h(x)

    def log_rh(self, x, anchor: float = 1.0) -> np.ndarray:
        x = self._check(x)
        m = self.base
        return self.log_ph(x, anchor) - 2 * math.log(m.lam) - 2 * np.log(m.sigma(x))

    def hprime_over_h(self, x) -> np.ndarray:
        """``h'(x)/h(x) = -(1/p(x)) / int_x^upper (1/p)``."""
        x = self._check(x)
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            if xi >= self.upper:
                out[i] = -np.inf
                continue
            lip = float(log_scale(self.base, np.array([xi]), self.upper)[0])
            lv = _log_integral_invp(self.base, xi, self.upper, self.rtol) if xi < self.upper else -np.inf
            out[i] = -math.exp(-lip - lv)
        return out

    def drift(self, x) -> np.ndarray:
        """Drift of the conditioned diffusion."""
        x = self._check(x)
        m = self.base
        base = 0.5 * m.lam**2 * (m.eps * m.b1(x) - m.b2(x))
        return base + m.lam**2 * m.sigma(x) ** 2 * self.hprime_over_h(x)

    def exit_moments(self, start: float, kmax: int = 2, *, return_error: bool = False):
        """Moments of the conditioned hitting time of ``lower`` from ``start``."""
        if not self.lower <= start < self.upper:
            raise DomainError("start must lie in [lower, upper)")
        if start == self.lower:
            zeros = tuple(0.0 for _ in range(kmax))
            return (zeros, zeros) if return_error else zeros
        cache = {}

        def ev_k(k):
            def ev(level, mv):
                key = (level, mv)
                if key not in cache:
                    cache[key] = _conditioned_moments(self.base, self.lower, self.upper, start, kmax, level, mv)
                return cache[key][k]
            return ev

        vals, errs = [], []
        for k in range(kmax):
            lv, e = _converged(ev_k(k), self.rtol, f"conditioned moment {k + 1}")
            vals.append(math.exp(lv))
            errs.append(e)
        return (tuple(vals), tuple(errs)) if return_error else tuple(vals)


def h_transform(model: DiffusionModel, lower: float, upper: float, *, rtol: float = DEFAULT_RTOL) -> HTransformModel:
    """Doob h-transform conditioning on hitting ``lower`` before ``upper``."""
    if not (0 < lower < upper < math.inf):
        raise DomainError(f"need 0 < lower < upper < inf, got ({lower}, {upper})")
    return HTransformModel(model, float(lower), float(upper), rtol)


def conditioned_downcross_moments(model: DiffusionModel, boundaries: CycleBoundaries, z: float,
                                  kmax: int = 2, *, rtol: float = DEFAULT_RTOL):
    """Moments of the down-crossing from ``beta(eps)`` to ``alpha(eps)`` conditioned to avoid ``z``."""
    alpha, beta = boundaries.at(model.eps)
    if not z > beta:
        raise DomainError("need z > beta(eps)")
    return h_transform(model, alpha, z, rtol=rtol).exit_moments(beta, kmax)


@dataclass(frozen=True)
class CycleMoments:
    """First two moments of the conditioned cycle length and its pieces.

    ``up1, up2`` are moments of the up-crossing time from ``alpha`` to
    ``beta``; ``down1, down2`` those of the conditioned down-crossing.
    """

    eps: float
    up1: float
    up2: float
    down1: float
    down2: float

    @property
    def mean(self) -> float:
        return self.up1 + self.down1

    @property
    def second(self) -> float:
        return self.up2 + 2 * self.up1 * self.down1 + self.down2

    @property
    def kappa(self) -> float:
        """Inverse mean cycle length (meaningful at ``lambda = 1``)."""
        return 1.0 / self.mean


def cycle_moments(model: DiffusionModel, boundaries: CycleBoundaries, z: float, *,
                  rtol: float = DEFAULT_RTOL) -> CycleMoments:
    """Analytic moments of one conditioned regeneration cycle."""
    alpha, beta = boundaries.at(model.eps)
    up1, up2 = exit_time_moments(model, alpha, (0.0, beta), KernelKind.UpperAbsorbing, 2, rtol=rtol)
    d1, d2 = conditioned_downcross_moments(model, boundaries, z, 2, rtol=rtol)
    return CycleMoments(model.eps, up1, up2, d1, d2)
