"""Diffusion models with a weak repulsive perturbation.

A model is the one-dimensional SDE on :math:`(0, \\infty)`

.. math::

    dX_t = \\frac{\\lambda^2}{2}\\bigl(\\varepsilon b_1(X_t) - b_2(X_t)\\bigr)\\,dt
           + \\lambda \\sigma(X_t)\\,dB_t .

Three preset families are provided (``BBLinear``, ``AsymLinear`` and
``RabiLinearized``); arbitrary coefficients can be supplied as callables
through the ``Custom`` family.  The state 0 is treated as an inaccessible
boundary.  This is an assumption about the coefficients that the library
does not verify for custom models.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError

__all__ = [
    "Family",
    "DiffusionModel",
    "TaylorBounds",
    "CycleBoundaries",
    "TransformedModel",
    "ValidationReport",
    "drift",
    "diffusion_coeff",
    "feller_transform",
    "validate_model",
]

Coefficient = Callable[[np.ndarray], np.ndarray]


class Family(enum.Enum):
    """Preset identity of a :class:`DiffusionModel`."""

    BBLinear = "BBLinear"
    AsymLinear = "AsymLinear"
    RabiLinearized = "RabiLinearized"
    Custom = "Custom"


# Preset coefficients are small callable classes rather than lambdas so
# that models survive pickling into worker processes.


@dataclass(frozen=True)
class RationalB1:
    """``b1(x) = a + a1 * x / (1 + x)``."""

    a: float = 1.0
    a1: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a + self.a1 * x / (1.0 + x)


@dataclass(frozen=True)
class CubicB2:
    """``b2(x) = b*x + c2*x**2 + c3*x**3``."""

    b: float = 1.0
    c2: float = 0.0
    c3: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x * (self.b + x * (self.c2 + x * self.c3))


@dataclass(frozen=True)
class PowerSigma:
    """``sigma(x) = s * x**k``."""

    s: float = 1.0
    k: int = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.s * x**self.k

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return self.s * self.k * x ** (self.k - 1)


@dataclass(frozen=True)
class DiffusionModel:
    """Coefficient triple ``(b1, b2, sigma)`` together with ``(lambda, epsilon)``.

    Use the preset constructors :meth:`bb_linear`, :meth:`asym_linear`,
    :meth:`rabi_linearized` or :meth:`custom` rather than the raw
    initializer.  Instances are immutable; :meth:`replace` returns a copy
    with updated parameters.

    Attributes
    ----------
    family : Family
        Preset identity.
    b1, b2, sigma : callable
        Vectorized coefficient functions.
    lam : float
        Time-scale factor lambda.
    eps : float
        Perturbation strength epsilon.  ``eps = 0`` is allowed for
        analytic work on the unperturbed diffusion.
    params : dict
        Preset parameters (``a, a1, b, c2, c3, s``); empty for custom models.
    dsigma : callable or None
        Derivative of ``sigma``.  Presets supply it exactly; for custom
        models a central difference is used when it is omitted.
    """

    family: Family
    b1: Coefficient
    b2: Coefficient
    sigma: Coefficient
    lam: float = 1.0
    eps: float = 0.0
    params: dict = field(default_factory=dict)
    dsigma: Coefficient | None = None

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be positive and finite, got {self.lam}")
        if not (self.eps >= 0 and math.isfinite(self.eps)):
            raise DomainError(f"epsilon must be nonnegative and finite, got {self.eps}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def bb_linear(cls, b: float = 1.0, lam: float = 1.0, eps: float = 0.0) -> "DiffusionModel":
        """Linear model ``b1 = 1, b2 = b x, sigma = x``."""
        _check_positive(b=b)
        return cls(Family.BBLinear, RationalB1(1.0, 0.0), CubicB2(b), PowerSigma(1.0, 1),
                   lam, eps, dict(a=1.0, a1=0.0, b=b, c2=0.0, c3=0.0, s=1.0))

    @classmethod
    def rabi_linearized(cls, b: float = 1.0, lam: float = 1.0, eps: float = 0.0) -> "DiffusionModel":
        """Linearized Rabi model ``b1 = 1, b2 = b x, sigma = x**2``."""
        _check_positive(b=b)
        return cls(Family.RabiLinearized, RationalB1(1.0, 0.0), CubicB2(b), PowerSigma(1.0, 2),
                   lam, eps, dict(a=1.0, a1=0.0, b=b, c2=0.0, c3=0.0, s=1.0))

    @classmethod
    def asym_linear(cls, a: float = 1.0, b: float = 1.0, sigma_prime: float = 1.0, *,
                    a1: float = 0.0, c2: float = 0.0, c3: float = 0.0,
                    lam: float = 1.0, eps: float = 0.0) -> "DiffusionModel":
        """Asymptotically linear model.

        ``b1(x) = a + a1 x/(1+x)``, ``b2(x) = b x + c2 x**2 + c3 x**3`` and
        ``sigma(x) = sigma_prime * x``.  The Taylor data at 0 are
        ``(a, b, sigma_prime)``.
        """
        _check_positive(a=a, b=b, sigma_prime=sigma_prime)
        if a + min(a1, 0.0) <= 0:
            raise DomainError("b1 must stay bounded away from 0: need a + min(a1, 0) > 0")
        if c2 < 0 or c3 < 0:
            raise DomainError("c2 and c3 must be nonnegative so that b2 >= 0")
        return cls(Family.AsymLinear, RationalB1(a, a1), CubicB2(b, c2, c3),
                   PowerSigma(sigma_prime, 1), lam, eps,
                   dict(a=a, a1=a1, b=b, c2=c2, c3=c3, s=sigma_prime))

    @classmethod
    def custom(cls, b1: Coefficient, b2: Coefficient, sigma: Coefficient, *,
               lam: float = 1.0, eps: float = 0.0,
               dsigma: Coefficient | None = None) -> "DiffusionModel":
        """Model with user supplied vectorized coefficients.

        The caller is responsible for the growth and positivity conditions
        on the coefficients; :func:`validate_model` only checks them on a grid.
        """
        return cls(Family.Custom, b1, b2, sigma, lam, eps, {}, dsigma)

    def replace(self, **changes) -> "DiffusionModel":
        """Copy with some fields changed, e.g. ``model.replace(lam=2.0)``."""
        return dataclasses.replace(self, **changes)

    # -- derived quantities -------------------------------------------------

    @property
    def is_preset(self) -> bool:
        return self.family is not Family.Custom

    def sigma_prime(self, x):
        """Derivative of ``sigma`` (exact for presets)."""
        x = np.asarray(x, dtype=float)
        if self.dsigma is not None:
            return np.asarray(self.dsigma(x), dtype=float)
        if isinstance(self.sigma, PowerSigma):
            return self.sigma.derivative(x)
        h = 1e-6 * np.maximum(x, 1e-300)
        return (self.sigma(x + h) - self.sigma(x - h)) / (2 * h)

    def scale_integrand(self, x):
        """``(eps*b1 - b2) / sigma**2``, the derivative of ``log p``."""
        x = np.asarray(x, dtype=float)
        return (self.eps * self.b1(x) - self.b2(x)) / self.sigma(x) ** 2

    def log_scale_closed(self, x, anchor: float):
        """Closed-form log scale density for presets, ``None`` for custom models.

        Returns ``log p_c(x) = int_c^x (eps b1 - b2)/sigma**2``.  For the
        Rabi preset ``anchor = inf`` is accepted.
        """
        if not self.is_preset:
            return None
        x = np.asarray(x, dtype=float)
        F = self._scale_antiderivative
        if math.isinf(anchor):
            if self.family is not Family.RabiLinearized:
                raise DomainError("an infinite anchor is only available for the Rabi preset")
            return F(x)
        return F(x) - F(np.asarray(anchor, dtype=float))

    def _scale_antiderivative(self, x):
        p, eps = self.params, self.eps
        if self.family is Family.RabiLinearized:
            b = p["b"]
            return -eps / (3.0 * x**3) + b / (2.0 * x**2)
        a, a1, b, c2, c3, s2 = p["a"], p["a1"], p["b"], p["c2"], p["c3"], p["s"] ** 2
        lx = np.log(x)
        out = -eps * a / (s2 * x) - (b / s2) * lx - c2 * x / s2 - c3 * x**2 / (2 * s2)
        if a1 != 0.0:
            out = out + (eps * a1 / s2) * (lx - np.log1p(x))
        return out


def _check_positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise DomainError(f"{k} must be positive and finite, got {v}")


# -- operations -------------------------------------------------------------


def drift(model: DiffusionModel, x):
    """Drift ``(lambda**2/2) (eps b1(x) - b2(x))``.

    Raises
    ------
    DomainError
        If any ``x <= 0``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("drift is defined on x > 0 only")
    out = 0.5 * model.lam**2 * (model.eps * model.b1(xa) - model.b2(xa))
    return float(out) if np.ndim(out) == 0 else out


def diffusion_coeff(model: DiffusionModel, x):
    """Diffusion coefficient ``lambda * sigma(x)``; zero at ``x = 0``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("diffusion coefficient is defined on x >= 0")
    out = model.lam * model.sigma(xa)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TransformedModel:
    """A model in Feller coordinates ``Y = F(X)`` with unit diffusion.

    ``dY = drift(Y) dt + lambda dB``.  ``F`` is strictly increasing.

    Attributes
    ----------
    base : DiffusionModel
    anchor : float
        Point where ``F`` vanishes (``inf`` for the Rabi limit form).
    F, F_inv, F_prime : callable
        Coordinate map, its inverse and its derivative ``1/sigma``.
    """

    base: DiffusionModel
    anchor: float
    F: Callable
    F_inv: Callable
    F_prime: Callable

    def drift(self, y):
        """Transformed drift ``mu(x)/sigma(x) - lambda**2 sigma'(x)/2`` at ``x = F_inv(y)``."""
        x = np.asarray(self.F_inv(y), dtype=float)
        m = self.base
        mu = 0.5 * m.lam**2 * (m.eps * m.b1(x) - m.b2(x))
        out = mu / m.sigma(x) - 0.5 * m.lam**2 * m.sigma_prime(x)
        return float(out) if np.ndim(out) == 0 else out

    def diffusion_coeff(self, y):
        """Transformed diffusion coefficient ``F'(x) * lambda * sigma(x)``; identically ``lambda``."""
        x = np.asarray(self.F_inv(y), dtype=float)
        out = self.F_prime(x) * self.base.lam * self.base.sigma(x)
        return float(out) if np.ndim(out) == 0 else out


def feller_transform(model: DiffusionModel, anchor: float | None = None) -> TransformedModel:
    """Change of coordinates ``F(x) = int_anchor^x du/sigma(u)`` giving unit diffusion.

    Parameters
    ----------
    model : DiffusionModel
    anchor : float, optional
        Defaults to 1 for linear-noise models and ``inf`` for the Rabi
        preset, where ``F(x) = -1/x``.

    Returns
    -------
    TransformedModel

    Raises
    ------
    DomainError
        If ``sigma`` vanishes at an interior point that is probed, or if the
        anchor is invalid for the family.
    """
    fam = model.family
    if anchor is None:
        anchor = math.inf if fam is Family.RabiLinearized else 1.0
    if not (anchor > 0):
        raise DomainError("anchor must be positive")

    if fam is Family.RabiLinearized:
        c = 0.0 if math.isinf(anchor) else 1.0 / anchor

        def F(x):
            return c - 1.0 / np.asarray(x, dtype=float)

        def F_inv(y):
            y = np.asarray(y, dtype=float)
            if np.any(y >= c):
                raise DomainError("Feller coordinate out of range")
            return 1.0 / (c - y)

    elif fam in (Family.BBLinear, Family.AsymLinear):
        if math.isinf(anchor):
            raise DomainError("infinite anchor diverges for linear noise")
        s = model.params["s"]

        def F(x):
            return np.log(np.asarray(x, dtype=float) / anchor) / s

        def F_inv(y):
            return anchor * np.exp(s * np.asarray(y, dtype=float))

    else:
        if math.isinf(anchor):
            raise DomainError("custom models need a finite anchor")
        F, F_inv = _numeric_feller(model, anchor)

    def F_prime(x):
        sig = np.asarray(model.sigma(np.asarray(x, dtype=float)), dtype=float)
        if np.any(sig <= 0):
            raise DomainError("sigma vanishes in the interior")
        return 1.0 / sig

    return TransformedModel(model, float(anchor), F, F_inv, F_prime)


def _numeric_feller(model: DiffusionModel, anchor: float):
    def inv_sigma(u):
        s = float(model.sigma(u))
        if s <= 0:
            raise DomainError(f"sigma vanishes at interior point {u}")
        return 1.0 / s

    def F_scalar(x):
        if x <= 0:
            raise DomainError("Feller transform is defined on x > 0")
        # integrate in log x for scale robustness
        val, _ = integrate.quad(lambda t: math.exp(t) * inv_sigma(math.exp(t)),
                                math.log(anchor), math.log(x), epsabs=0, epsrel=1e-13, limit=200)
        return val

    def F(x):
        return np.vectorize(F_scalar, otypes=[float])(x)

    def F_inv_scalar(y):
        if y == 0:
            return anchor
        lo, hi = (anchor, 2 * anchor) if y > 0 else (anchor / 2, anchor)
        while F_scalar(hi) < y:
            hi *= 2
        while F_scalar(lo) > y:
            lo /= 2
        return optimize.brentq(lambda x: F_scalar(x) - y, lo, hi, xtol=1e-300, rtol=1e-15)

    def F_inv(y):
        return np.vectorize(F_inv_scalar, otypes=[float])(y)

    return F, F_inv


@dataclass(frozen=True)
class TaylorBounds:
    """Taylor data of the coefficients at 0 with a remainder constant.

    Near zero ``b1(x) ~ a``, ``b2(x) ~ b x`` and ``sigma(x)**2 ~ sigma_prime**2 x**2``
    with remainders bounded by ``M x``, ``M x**2`` and ``M x**3`` on
    ``(0, delta0]``.
    """

    a: float
    b: float
    sigma_prime: float
    M: float
    delta0: float

    def __post_init__(self):
        _check_positive(a=self.a, b=self.b, sigma_prime=self.sigma_prime, M=self.M, delta0=self.delta0)
        cap = min(self.a, self.b, self.sigma_prime**2) / (2 * self.M)
        if not self.delta0 < cap:
            raise DomainError(f"delta0={self.delta0} must be below min(a, b, sigma'^2)/(2M)={cap:.6g}")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_model`.

    ``rows`` holds one tuple per grid point:
    ``(x, b1_excess, b2_excess, sigma2_excess, ok)`` where each excess is
    ``|remainder| - allowed`` (nonpositive when the inequality holds).
    """

    rows: tuple
    passed: bool

    def as_dicts(self) -> list[dict]:
        keys = ("x", "b1_excess", "b2_excess", "sigma2_excess", "ok")
        return [dict(zip(keys, r)) for r in self.rows]


def validate_model(model: DiffusionModel, bounds: TaylorBounds, grid: Sequence[float],
                   slack: float = 1e-12) -> ValidationReport:
    """Check the Taylor remainder inequalities on a grid of points.

    Parameters
    ----------
    model : DiffusionModel
    bounds : TaylorBounds
    grid : sequence of float
        Points in ``(0, bounds.delta0]``.
    slack : float
        Relative tolerance absorbing rounding when an inequality holds
        with equality.

    Raises
    ------
    DomainError
        If the grid is empty or contains points outside ``(0, delta0]``.
    """
    x = np.asarray(list(grid), dtype=float)
    if x.size == 0:
        raise DomainError("grid must be nonempty")
    if np.any(x <= 0) or np.any(x > bounds.delta0):
        raise DomainError(f"grid points must lie in (0, delta0={bounds.delta0}]")
    B = bounds
    e1 = np.abs(model.b1(x) - B.a) - B.M * x
    e2 = np.abs(model.b2(x) - B.b * x) - B.M * x**2
    e3 = np.abs(model.sigma(x) ** 2 - B.sigma_prime**2 * x**2) - B.M * x**3
    tol = slack * np.maximum(1.0, B.M)
    ok = (e1 <= tol) & (e2 <= tol * x) & (e3 <= tol * x**2)
    rows = tuple((float(xi), float(a), float(b), float(c), bool(o))
                 for xi, a, b, c, o in zip(x, e1, e2, e3, ok))
    return ValidationReport(rows, bool(ok.all()))


@dataclass(frozen=True)
class CycleBoundaries:
    """The functions ``alpha(eps) < beta(eps)`` delimiting regeneration cycles.

    Use :meth:`linear` or :meth:`rabi` for the standard choices.
    """

    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    name: str = "custom"

    @classmethod
    def linear(cls, alpha: float = 1.0, beta: float = 2.0) -> "CycleBoundaries":
        """``alpha(eps) = alpha*eps`` and ``beta(eps) = beta*eps``."""
        _check_positive(alpha=alpha, beta=beta)
        if not alpha < beta:
            raise DomainError("need alpha < beta")
        return cls(_Scaled(alpha, 0.0, 0.0), _Scaled(beta, 0.0, 0.0), f"linear({alpha},{beta})")

    @classmethod
    def rabi(cls, b: float = 1.0, l: float = 1.0) -> "CycleBoundaries":
        """``alpha(eps) = eps/b`` and ``beta(eps) = eps/b + l*eps**2``."""
        _check_positive(b=b, l=l)
        return cls(_Scaled(1.0 / b, 0.0, 0.0), _Scaled(1.0 / b, l, 0.0), f"rabi({b},{l})")

    def at(self, eps: float) -> tuple[float, float]:
        """Return ``(alpha(eps), beta(eps))`` after checking ``0 < alpha < beta``."""
        a, b = float(self.alpha(eps)), float(self.beta(eps))
        if not (0 < a < b):
            raise DomainError(f"boundaries invalid at eps={eps}: alpha={a}, beta={b}")
        return a, b


@dataclass(frozen=True)
class _Scaled:
    """``c1*eps + c2*eps**2``; picklable."""

    c1: float
    c2: float
    c0: float

    def __call__(self, eps):
        return self.c0 + self.c1 * eps + self.c2 * eps**2
