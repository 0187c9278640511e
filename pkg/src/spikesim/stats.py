"""Tests of Monte Carlo samples against the limit laws.

Covers Wilson intervals for proportions, one-sample Kolmogorov-Smirnov
against an exponential law, a chi-square dispersion test for counts, an
empirical CDF with sup-distance, and the atom-plus-exponential mixture test
for hitting times.  Every function depends only on the sample multiset.

P-values are asymptotic: the Kolmogorov distribution for KS statistics and
the chi-square law for the dispersion statistic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats as _st

from .errors import DomainError
from .limits import LimitPrediction

__all__ = [
    "ECDF",
    "KSResult",
    "MixtureTestReport",
    "binomial_ci",
    "ecdf",
    "ks_test",
    "ks_exponential",
    "ks_two_sample",
    "poisson_dispersion",
    "mixture_test",
    "DEFAULT_T0_FACTORS",
]

DEFAULT_T0_FACTORS = (0.01, 0.05, 0.10)


class KSResult(NamedTuple):
    stat: float
    pvalue: float


def binomial_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Parameters
    ----------
    successes, n : int
        Number of successes and of trials, ``0 <= successes <= n``, ``n >= 1``.
    level : float
        Two-sided confidence level in (0, 1).

    Returns
    -------
    (lo, hi) : tuple of float
    """
    if int(successes) != successes or int(n) != n:
        raise DomainError("counts must be integers")
    successes, n = int(successes), int(n)
    if n < 1 or not 0 <= successes <= n:
        raise DomainError(f"invalid counts: successes={successes}, n={n}")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    z = _st.norm.isf(0.5 * (1.0 - level))
    p = successes / n
    z2n = z * z / n
    centre = (p + 0.5 * z2n) / (1.0 + z2n)
    half = z / (1.0 + z2n) * math.sqrt(p * (1.0 - p) / n + z2n / (4.0 * n))
    # the formula is exact at the edges; avoid rounding just past them
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return float(lo), float(hi)


class ECDF:
    """Right-continuous empirical distribution function.

    Parameters
    ----------
    samples : array_like
        Nonempty sample; order is irrelevant.
    """

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise DomainError("ecdf of an empty sample")
        if np.isnan(x).any():
            raise DomainError("samples contain NaN")
        self.x = x
        self.n = x.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.searchsorted(self.x, t, side="right") / self.n
        return float(out) if out.ndim == 0 else out

    def sup_distance(self, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
        """``sup_t |F_n(t) - F(t)|`` for a continuous distribution function ``F``.

        The supremum is attained at the jumps, on either side.
        """
        F = np.asarray(cdf(self.x), dtype=float)
        i = np.arange(1, self.n + 1)
        above = np.max(i / self.n - F)
        below = np.max(F - (i - 1) / self.n)
        return float(min(1.0, max(above, below, 0.0)))


def ecdf(samples) -> ECDF:
    """Empirical distribution function of ``samples``; see :class:`ECDF`."""
    return ECDF(samples)


def _kolmogorov_sf(stat: float, n: int) -> float:
    return float(_st.kstwobign.sf(math.sqrt(n) * stat))


def ks_test(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> KSResult:
    """One-sample KS test against a continuous ``cdf``, asymptotic p-value."""
    e = ECDF(samples)
    d = e.sup_distance(cdf)
    return KSResult(d, _kolmogorov_sf(d, e.n))


def ks_exponential(samples, rate: float) -> KSResult:
    """One-sample KS test of ``samples`` against ``Exp(rate)``.

    Parameters
    ----------
    samples : array_like
        Nonempty, nonnegative sample.
    rate : float
        Rate of the null exponential law.

    Returns
    -------
    KSResult
        ``(stat, pvalue)`` with the asymptotic Kolmogorov p-value.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("ks_exponential needs at least one sample")
    if np.any(x < 0) or np.isnan(x).any():
        raise DomainError("exponential samples must be nonnegative")
    if not (rate > 0 and math.isfinite(rate)):
        raise DomainError(f"rate must be positive, got {rate}")
    return ks_test(x, lambda t: -np.expm1(-rate * t))


def ks_two_sample(a, b) -> KSResult:
    """Two-sample KS test (exact or asymptotic p-value as chosen by scipy)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("two-sample KS needs nonempty samples")
    r = _st.ks_2samp(a, b)
    return KSResult(float(r.statistic), float(r.pvalue))


def poisson_dispersion(counts) -> tuple[float, float]:
    """Dispersion index of counts and its chi-square p-value.

    The index is ``var / mean`` with the unbiased variance.  Under a Poisson
    null ``(n - 1) * index`` is approximately chi-square with ``n - 1``
    degrees of freedom; the p-value is two-sided, so both over- and
    under-dispersion reject.

    Returns
    -------
    (index, pvalue) : tuple of float
    """
    c = np.asarray(counts, dtype=float).ravel()
    if c.size < 2:
        raise DomainError("dispersion test needs at least two counts")
    if np.any(c < 0):
        raise DomainError("counts must be nonnegative")
    mean = c.mean()
    if mean == 0:
        raise DomainError("dispersion index undefined for zero mean")
    index = float(c.var(ddof=1) / mean)
    df = c.size - 1
    stat = df * index
    p = 2.0 * min(_st.chi2.cdf(stat, df), _st.chi2.sf(stat, df))
    return index, float(min(1.0, p))


@dataclass(frozen=True)
class MixtureTestReport:
    """Empirical check of the atom-plus-exponential law at one threshold.

    Samples below ``t0`` count as the atom; the excesses ``T - t0`` of the
    remaining samples are tested against ``Exp(rate)``, which is the
    conditional tail law by memorylessness.

    Attributes
    ----------
    t0 : float
        Atom/tail threshold.
    atom_fraction_hat : float
        Fraction of samples below ``t0``.
    atom_ci : tuple of float
        Wilson interval for the atom fraction.
    ks_stat, ks_pvalue : float
        KS test of the tail excesses (NaN when the tail is empty).
    rate_hat : float
        Reciprocal mean tail excess (NaN when the tail is empty).
    n : int
        Total sample size.
    n_tail : int
        Number of samples at or above ``t0``.
    atom_expected : float
        Predicted atom weight ``1 - alpha_xz``.
    rate_tested : float
        Rate used as the KS null.
    degenerate : bool
        True when every sample lies below ``t0``.
    """

    t0: float
    atom_fraction_hat: float
    atom_ci: tuple[float, float]
    ks_stat: float
    ks_pvalue: float
    rate_hat: float
    n: int
    n_tail: int
    atom_expected: float
    rate_tested: float
    degenerate: bool

    @property
    def atom_covered(self) -> bool:
        return self.atom_ci[0] <= self.atom_expected <= self.atom_ci[1]

    def passes(self, ks_level: float = 0.01) -> bool:
        """Atom CI covers the prediction and the tail KS does not reject."""
        return (not self.degenerate) and self.atom_covered and self.ks_pvalue > ks_level

    def to_dict(self) -> dict:
        d = asdict(self)
        d["atom_ci"] = list(self.atom_ci)
        return d


def mixture_test(samples, prediction: LimitPrediction, t0_grid: Sequence[float] | None = None,
                 *, level: float = 0.95, self_calibrated: bool = False) -> list[MixtureTestReport]:
    """Test hitting-time samples against ``(1 - alpha) delta_0 + alpha Exp(rate)``.

    Parameters
    ----------
    samples : array_like
        Nonempty, nonnegative hitting times.
    prediction : LimitPrediction
        Limit law supplying ``alpha_xz`` and ``rate``.
    t0_grid : sequence of float, optional
        Thresholds; defaults to ``(0.01, 0.05, 0.10) / rate``.
    level : float
        Level of the Wilson interval on the atom fraction.
    self_calibrated : bool
        Test the tail against ``Exp(rate_hat)`` instead of the predicted rate.
        The KS p-value is then conservative since the rate is estimated.

    Returns
    -------
    list of MixtureTestReport
        One report per threshold, in ``t0_grid`` order.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("mixture_test needs at least one sample")
    if np.any(x < 0) or np.isnan(x).any():
        raise DomainError("hitting times must be nonnegative")
    if t0_grid is None:
        t0_grid = [f / prediction.rate for f in DEFAULT_T0_FACTORS]
    out = []
    n = x.size
    for t0 in t0_grid:
        t0 = float(t0)
        if not t0 > 0:
            raise DomainError(f"t0 must be positive, got {t0}")
        k = int(np.searchsorted(x, t0, side="left"))
        frac = k / n
        ci = binomial_ci(k, n, level)
        excess = x[k:] - t0
        if excess.size == 0:
            out.append(MixtureTestReport(t0, frac, ci, math.nan, math.nan, math.nan, n, 0,
                                         prediction.atom_weight, math.nan, True))
            continue
        m = excess.mean()
        rate_hat = 1.0 / m if m > 0 else math.inf
        rate = rate_hat if self_calibrated else prediction.rate
        if math.isfinite(rate):
            ks = ks_exponential(excess, rate)
        else:
            ks = KSResult(1.0, 0.0)
        out.append(MixtureTestReport(t0, frac, ci, ks.stat, ks.pvalue, rate_hat, n, int(excess.size),
                                     prediction.atom_weight, rate, False))
    return out
