"""Composite Gauss-Legendre quadrature carried out in log space.

Integrands handled here are positive and may span thousands of orders of
magnitude, so every routine works with the logarithm of the integrand and
only exponentiates after subtracting a per-panel maximum.  Cumulative
integrals (forward from the left end and backward from the right end) are
available at every node, which lets nested integrals such as Green-kernel
moments reuse a single grid.

Panels live in a working coordinate ``t``: either ``x = t`` or ``x = exp(t)``.
Logarithmic coordinates turn the neighbourhood of 0 (and of infinity) into
a half line on which the integrands decay quickly.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as _leg

from .errors import QuadratureError

ORDER = 16
_NODES, _WEIGHTS = _leg.leggauss(ORDER)
_LOGW = np.log(_WEIGHTS)


def _cumulative_matrices():
    vinv = np.linalg.inv(_leg.legvander(_NODES, ORDER - 1))
    eye = np.eye(ORDER)
    fwd = np.stack([_leg.legval(_NODES, _leg.legint(eye[i], lbnd=-1)) for i in range(ORDER)], axis=1)
    rev = np.stack([_leg.legval(_NODES, _leg.legint(eye[i], lbnd=1)) for i in range(ORDER)], axis=1)
    # fwd[j] integrates the interpolant over [-1, t_j]; rev[j] over [t_j, 1]
    return fwd @ vinv, -(rev @ vinv)


_FWD, _REV = _cumulative_matrices()

DROP_NATS = 60.0     # truncation depth for improper integrals
MAX_VAR = 4.0        # allowed variation of a monitored log function per panel
LOG_TINY = -1e300


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


class Grid:
    """Panel grid on a sorted array of breakpoints in working coordinates.

    Parameters
    ----------
    breaks : array_like
        Strictly increasing, finite breakpoints.
    log_coords : bool
        If true, ``x = exp(t)`` and integrals carry the Jacobian ``x``.
    """

    def __init__(self, breaks, log_coords: bool):
        b = np.asarray(breaks, dtype=float)
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0) or not np.all(np.isfinite(b)):
            raise ValueError("breakpoints must be finite and strictly increasing")
        self.breaks = b
        self.log_coords = log_coords
        self.half = 0.5 * np.diff(b)
        mid = 0.5 * (b[1:] + b[:-1])
        self.nodes = mid[:, None] + self.half[:, None] * _NODES
        if log_coords:
            self.x_nodes = np.exp(self.nodes)
            self.x_breaks = np.exp(b)
            self.log_jac = self.nodes
        else:
            self.x_nodes = self.nodes
            self.x_breaks = b
            self.log_jac = np.zeros_like(self.nodes)

    @property
    def n_panels(self) -> int:
        return self.half.size

    def break_index(self, x: float) -> int:
        """Index of the breakpoint equal to ``x`` (in original coordinates)."""
        t = math.log(x) if self.log_coords else x
        i = int(np.argmin(np.abs(self.breaks - t)))
        if abs(self.breaks[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"{x} is not a breakpoint of the grid")
        return i

    def break_indices(self, x) -> np.ndarray:
        """Indices of the breakpoints nearest to the points ``x`` (original coordinates)."""
        t = np.log(np.asarray(x, dtype=float)) if self.log_coords else np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.breaks, t), 1, self.breaks.size - 1)
        left = np.abs(self.breaks[i - 1] - t) <= np.abs(self.breaks[i] - t)
        return np.where(left, i - 1, i)

    def bisected(self, mask: np.ndarray | None = None) -> "Grid":
        """Grid with the selected panels (all by default) split in two."""
        mids = 0.5 * (self.breaks[1:] + self.breaks[:-1])
        if mask is not None:
            mids = mids[mask]
        return Grid(np.sort(np.concatenate([self.breaks, mids])), self.log_coords)

    # -- log-space integration ------------------------------------------------

    def log_panel_totals(self, L: np.ndarray) -> np.ndarray:
        """Log of the integral over each panel of ``exp(L)`` (x-measure)."""
        return _logsumexp(L + self.log_jac + _LOGW, axis=1) + np.log(self.half)

    def log_total(self, L: np.ndarray) -> float:
        tot = self.log_panel_totals(L)
        return float(_logsumexp(tot, axis=0))

    def log_cumulative(self, L: np.ndarray, reverse: bool = False, log_init: float = -np.inf):
        """Log cumulative integrals of ``exp(L)``.

        Parameters
        ----------
        L : ndarray, shape (n_panels, ORDER)
            Log integrand at the nodes (x-measure).
        reverse : bool
            Integrate from each point to the right end instead of from the
            left end.
        log_init : float
            Log of a mass added at the starting end (e.g. a tail beyond the
            last panel).

        Returns
        -------
        at_nodes : ndarray, shape (n_panels, ORDER)
        at_breaks : ndarray, shape (n_panels + 1,)
        """
        Lx = L + self.log_jac
        tot = self.log_panel_totals(L)
        m = np.max(Lx, axis=1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        E = np.exp(Lx - m)
        if not reverse:
            at_breaks = np.logaddexp.accumulate(np.concatenate([[log_init], tot]))
            part = E @ _FWD.T
            start = at_breaks[:-1, None]
        else:
            at_breaks = np.logaddexp.accumulate(np.concatenate([[log_init], tot[::-1]]))[::-1]
            part = E @ _REV.T
            start = at_breaks[1:, None]
        # the interpolant may undershoot very slightly where E is tiny
        part = np.maximum(part, 1e-300)
        with np.errstate(divide="ignore"):
            inner = np.log(part) + m + np.log(self.half)[:, None]
        return np.logaddexp(start, inner), at_breaks

    # -- signed (linear-space) integration -------------------------------------

    def cumulative_signed(self, f: np.ndarray):
        """Forward cumulative integrals of a signed integrand (x-measure)."""
        fx = f * np.exp(self.log_jac)
        tot = (fx @ _WEIGHTS) * self.half
        at_breaks = np.concatenate([[0.0], np.cumsum(tot)])
        inner = (fx @ _FWD.T) * self.half[:, None]
        return at_breaks[:-1, None] + inner, at_breaks


def geometric_breaks(lo: float, hi: float, ratio: float = 1.5, points: Sequence[float] = ()) -> np.ndarray:
    """Breakpoints in log coordinates from ``lo`` to ``hi`` (both > 0)."""
    a, b = math.log(lo), math.log(hi)
    n = max(1, int(math.ceil((b - a) / math.log(ratio))))
    t = np.linspace(a, b, n + 1)
    extra = [math.log(p) for p in points if lo < p < hi]
    return _merge(t, extra)


def linear_breaks(lo: float, hi: float, n: int = 8, points: Sequence[float] = ()) -> np.ndarray:
    t = np.linspace(lo, hi, n + 1)
    return _merge(t, [p for p in points if lo < p < hi])


def _merge(t: np.ndarray, extra: Sequence[float]) -> np.ndarray:
    if len(extra):
        t = np.sort(np.concatenate([t, np.asarray(extra, dtype=float)]))
    # drop near-duplicates so that panels stay non-degenerate
    width = t[-1] - t[0]
    keep = np.concatenate([[True], np.diff(t) > 1e-13 * max(width, 1.0)])
    # always keep the requested extra points exactly
    t = t[keep]
    return t


def refine(grid: Grid, monitor: Callable[[Grid], np.ndarray], max_var: float = MAX_VAR,
           max_width: float | None = None, frozen: Callable[[Grid], np.ndarray] | None = None,
           max_panels: int = 2_000_000) -> Grid:
    """Bisect panels until every monitored log function varies by at most ``max_var``.

    Parameters
    ----------
    monitor : callable
        ``monitor(grid)`` returns an array ``(k, n_panels, ORDER)`` of log
        functions evaluated at the nodes.
    max_width : float, optional
        Largest allowed panel width in working coordinates.
    frozen : callable, optional
        Returns a boolean mask of panels that must never be split.
    """
    while True:
        M = np.asarray(monitor(grid))
        if M.ndim == 2:
            M = M[None]
        with np.errstate(invalid="ignore"):
            var = np.max(np.max(M, axis=2) - np.min(M, axis=2), axis=0)
        var = np.where(np.isfinite(var), var, np.inf)
        split = var > max_var
        if max_width is not None:
            split |= 2 * grid.half > max_width
        if frozen is not None:
            split &= ~frozen(grid)
        if not split.any():
            return grid
        if grid.n_panels + split.sum() > max_panels:
            raise QuadratureError("panel budget exhausted while resolving the integrand", math.inf)
        grid = grid.bisected(split)


def find_cutoff(logf: Callable[[np.ndarray], np.ndarray], t0: float, direction: int,
                drop: float = DROP_NATS, step: float = math.log(8.0), t_limit: float = 700.0) -> float:
    """Walk from ``t0`` in ``direction`` until ``logf`` falls ``drop`` nats below its peak.

    ``logf`` is the log integrand in working coordinates (Jacobian
    included).  The walk stops only where the function is also
    decreasing outward.

    Raises
    ------
    QuadratureError
        If no such point exists before ``|t| = t_limit`` (the integral
        diverges or decays too slowly to be represented).
    """
    t = t0
    prev = float(logf(np.array([t]))[0])
    peak = prev if np.isfinite(prev) else -np.inf
    while abs(t) < t_limit:
        t_next = t + direction * step
        # fine sub-walk so that sharp peaks between coarse points are seen
        sub = t + direction * step * np.linspace(1.0 / 32, 1.0, 32)
        vals = np.asarray(logf(sub), dtype=float)
        if np.any(np.isnan(vals)) or np.any(vals == np.inf):
            break
        before = np.concatenate([[prev], vals[:-1]])
        running = np.maximum.accumulate(np.maximum(vals, peak))
        hit = np.nonzero((vals < running - drop) & (vals < before))[0]
        if hit.size:
            return float(sub[hit[0]])
        peak = float(running[-1])
        prev, t = float(vals[-1]), t_next
    raise QuadratureError("integrand does not decay at the boundary; integral diverges", math.inf)


def integrate_log(logf: Callable[[np.ndarray], np.ndarray], a: float, b: float, *,
                  rtol: float = 1e-10, points: Sequence[float] = (), coords: str = "auto",
                  max_rounds: int = 6) -> tuple[float, float]:
    """Log of ``int_a^b exp(logf(x)) dx`` for a positive integrand.

    ``a = 0`` and ``b = inf`` are allowed; the integral is then truncated
    where the integrand has fallen ``DROP_NATS`` below its peak and the
    truncated mass is folded into the error estimate.

    Returns
    -------
    log_value : float
    rel_err : float
        Estimated relative error of ``exp(log_value)``.
    """
    if not a < b:
        raise ValueError("need a < b")
    if coords == "auto":
        coords = "log" if (a == 0 or math.isinf(b) or b / a > 20) else "linear"
    log_coords = coords == "log"
    if log_coords:
        def lf(t):
            return logf(np.exp(t)) + t
        lo = math.log(a) if a > 0 else None
        hi = math.log(b) if math.isfinite(b) else None
        inner = [math.log(p) for p in points if a < p < b]
        if lo is None and hi is None:
            seed = inner[0] if inner else 0.0
        else:
            seed = lo if lo is not None else hi
        anchor_lo = min([seed] + inner) if lo is None else lo
        anchor_hi = max([seed] + inner) if hi is None else hi
        if lo is None:
            lo = find_cutoff(lf, anchor_lo, -1)
        if hi is None:
            hi = find_cutoff(lf, anchor_hi, +1)
        if hi - lo < 1e-12:
            hi = lo + 1.0
        n = max(4, int(math.ceil((hi - lo) / math.log(1.5))))
        breaks = _merge(np.linspace(lo, hi, n + 1), [p for p in inner if lo < p < hi])
        trunc_lo, trunc_hi = a == 0, math.isinf(b)
    else:
        if a == 0 and not math.isfinite(logf(np.array([0.0]))[0]):
            raise ValueError("linear coordinates need a finite integrand at the ends")
        breaks = linear_breaks(a, b, 8, points)
        trunc_lo = trunc_hi = False
        lf = logf

    grid = Grid(breaks, log_coords)

    def monitor(g):
        return logf(g.x_nodes) + g.log_jac

    max_var = MAX_VAR
    for _ in range(max_rounds):
        grid = refine(grid, monitor, max_var=max_var)
        v1 = grid.log_total(logf(grid.x_nodes))
        g2 = grid.bisected()
        v2 = g2.log_total(logf(g2.x_nodes))
        err = abs(math.expm1(v1 - v2)) + 1e-15
        # mass outside a truncated end is bounded by the edge value times a decay scale
        if trunc_lo:
            err += math.exp(min(0.0, float(lf(np.array([grid.breaks[0]]))[0]) - v2))
        if trunc_hi:
            err += math.exp(min(0.0, float(lf(np.array([grid.breaks[-1]]))[0]) - v2))
        if err <= rtol:
            return v2, err
        max_var /= 2
        grid = g2
    raise QuadratureError("log-space quadrature did not converge", err, math.exp(v2) if v2 < 700 else math.inf)
