"""Monte Carlo simulation of cycles, spikes and hitting times.

Paths are simulated by an adaptive Euler-Maruyama scheme (compiled with
numba) either in the original coordinate or in the unit-diffusion
coordinate ``Y = F(X)``.  The latter is the default for the presets: it
keeps the state positive without clamping.

Reproducibility
---------------
Path ``i`` of an experiment draws from
``Generator(Philox(key=K, counter=[0, 0, tag, i]))`` where ``K`` is derived
from the master seed with :class:`numpy.random.SeedSequence` and ``tag``
identifies the experiment type.  Results therefore depend only on the
master seed and the path index, never on how paths are spread over
workers.

Clocks
------
``SimConfig.dt_max`` and ``dt_min`` are given in the intrinsic clock of the
``lambda = 1`` model; the simulator divides them by ``lambda**2``.  All
reported times are in the clock of the model as given (so for a model with
``lambda != 1`` they equal ``lambda**-2`` times the intrinsic cycle clock).
"""

from __future__ import annotations

import enum
import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import analytic
from .errors import DomainError, RejectionBudgetExceeded, StepBudgetExceeded
from .model import CycleBoundaries, DiffusionModel, Family, _Scaled

__all__ = [
    "Scheme",
    "SimConfig",
    "Which",
    "HitResult",
    "CycleRecord",
    "SpikeTrain",
    "simulate_until_hit",
    "simulate_hits",
    "sample_cycle",
    "sample_cycles",
    "sample_conditioned_downcross_rejection",
    "sample_downcross_rejection",
    "sample_downcross_htransform",
    "run_spike_process",
    "run_spike_processes",
    "sample_hitting_time_from_x",
    "sample_hitting_times",
    "path_stream",
]

# stream tags, one per experiment type
TAG_HIT, TAG_CYCLE, TAG_REJECT, TAG_HDOWN, TAG_SPIKES, TAG_HITX = 1, 2, 3, 4, 5, 6


class Scheme(enum.Enum):
    EulerNative = "EulerNative"
    EulerTransformed = "EulerTransformed"


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Attributes
    ----------
    scheme : Scheme
        ``EulerTransformed`` (default) integrates the unit-diffusion
        coordinate; ``EulerNative`` integrates ``x`` itself and rejects
        steps that would leave ``(0, inf)``.
    dt_max, dt_min : float
        Step bounds in the intrinsic (``lambda = 1``) clock.
    c_drift, c_bar : float
        Step adaptivity: ``dt <= c_drift s^2 / (lam^2 d^2)`` limits the drift
        displacement relative to the noise, ``dt <= c_bar dist^2 / (lam^2 s^2)``
        shrinks steps near barriers.
    barrier_refine : bool
        Test barrier crossings between grid points with the exact
        Brownian-bridge law.
    rng_master_seed : int
    max_steps : int
        Step budget per path; exceeding it raises
        :class:`~spikesim.errors.StepBudgetExceeded`.
    workers : int
        Worker processes for batch runs.
    noise_scale : float
        Multiplies the noise; 0 gives the deterministic flow (test hook).
    h_table_size : int
        Resolution of the tabulated conditioned-drift correction.
    table_range : (float, float)
        ``x`` range of the coefficient tables used for custom models.
    table_size : int
    """

    scheme: Scheme = Scheme.EulerTransformed
    dt_max: float = 1e-3
    dt_min: float = 1e-9
    c_drift: float = 0.1
    c_bar: float = 0.25
    barrier_refine: bool = True
    rng_master_seed: int = 0
    max_steps: int = 10**9
    workers: int = 1
    noise_scale: float = 1.0
    h_table_size: int = 4096
    table_range: tuple = (1e-8, 1e4)
    table_size: int = 1 << 16

    def __post_init__(self):
        if not isinstance(self.scheme, Scheme):
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.dt_max > 0 and 0 < self.dt_min <= self.dt_max):
            raise DomainError("need 0 < dt_min <= dt_max")
        if not (self.c_drift > 0 and self.c_bar > 0):
            raise DomainError("step constants must be positive")
        if not (0 <= int(self.rng_master_seed) < 2**64):
            raise DomainError("the master seed must be an unsigned 64-bit integer")
        if self.workers < 1 or self.max_steps < 1:
            raise DomainError("workers and max_steps must be positive")
        if self.noise_scale < 0:
            raise DomainError("noise_scale must be nonnegative")

    def replace(self, **kw) -> "SimConfig":
        import dataclasses
        return dataclasses.replace(self, **kw)

    def _cfg_array(self) -> np.ndarray:
        return np.array([self.dt_max, self.dt_min, self.c_drift, self.c_bar,
                         1.0 if self.barrier_refine else 0.0, self.noise_scale,
                         float(self.max_steps)])


class Which(enum.Enum):
    Low = "Low"
    High = "High"


@dataclass(frozen=True)
class HitResult:
    which: Which
    time: float
    max_level: float
    steps: int


@dataclass(frozen=True)
class CycleRecord:
    """One regeneration cycle.

    ``tau`` is the time the up-phase reaches ``beta``, ``sigma`` the time
    the cycle returns to ``alpha``.
    """

    tau: float
    sigma: float
    max_level: float
    spike: bool
    conditioned: bool
    spike_time: float = math.nan


@dataclass(frozen=True)
class SpikeTrain:
    """Spike times within ``[0, horizon]`` for one run.

    ``times`` follow the crossing-time convention for the cycle that
    straddles the horizon.  ``count_completed`` counts only spikes of cycles
    finished by the horizon and ``count_inclusive`` also the spike of the
    straddling cycle; the three counts bracket each other.
    """

    horizon: float
    times: np.ndarray
    n_cycles: int
    count_completed: int = 0
    count_inclusive: int = 0

    @property
    def count(self) -> int:
        return int(self.times.size)


# -- kernel specification -------------------------------------------------


@dataclass(frozen=True)
class _Spec:
    """Picklable description of what the kernels need."""

    fam: int
    scheme: int
    prm: np.ndarray
    cfg: np.ndarray
    tx: np.ndarray
    tmu: np.ndarray
    tsig: np.ndarray
    key: np.ndarray

    def w(self, x: float) -> float:
        if x == math.inf:
            return math.inf
        return float(K.to_w(float(x), self.fam, self.scheme, self.prm))

    def x(self, w: float) -> float:
        return float(K.to_x(float(w), self.fam, self.scheme, self.prm))

    def args(self):
        return (self.fam, self.scheme, self.prm, self.cfg, self.tx, self.tmu, self.tsig)


_DUMMY = np.zeros(1)


def _master_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)


def path_stream(master_seed: int, tag: int, path_id: int) -> np.random.Generator:
    """The random stream of one path (see the module docstring)."""
    return _stream(_master_key(master_seed), tag, path_id)


def _stream(key: np.ndarray, tag: int, path_id: int) -> np.random.Generator:
    counter = np.array([0, 0, tag, path_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _spec(model: DiffusionModel, config: SimConfig) -> _Spec:
    p = model.params
    prm = np.array([model.eps, model.lam, p.get("a", 0.0), p.get("a1", 0.0), p.get("b", 0.0),
                    p.get("c2", 0.0), p.get("c3", 0.0), p.get("s", 1.0)])
    scheme = 1 if config.scheme is Scheme.EulerTransformed else 0
    if model.family is Family.RabiLinearized:
        fam = K.FAM_QUADRATIC_NOISE
        tx = tmu = tsig = _DUMMY
    elif model.family in (Family.BBLinear, Family.AsymLinear):
        fam = K.FAM_LINEAR_NOISE
        tx = tmu = tsig = _DUMMY
    else:
        if scheme == 1:
            raise DomainError("custom models are simulated with the EulerNative scheme only")
        fam = K.FAM_TABULATED
        lo, hi = config.table_range
        tx = np.linspace(math.log(lo), math.log(hi), config.table_size)
        xs = np.exp(tx)
        tmu = 0.5 * (model.eps * model.b1(xs) - model.b2(xs))
        tsig = np.asarray(model.sigma(xs), dtype=float)
        if np.any(tsig <= 0) or not np.all(np.isfinite(tmu)):
            raise DomainError("custom coefficients must be finite with sigma > 0 on the table range")
    return _Spec(fam, scheme, prm, config._cfg_array(), tx, tmu, tsig, _master_key(config.rng_master_seed))


def _h_table(model: DiffusionModel, spec: _Spec, lower: float, upper: float, n: int):
    """``R(x) = (z - x) h'(x)/h(x) * (-1)`` on a uniform grid in the working coordinate."""
    w_lo, w_hi = spec.w(lower), spec.w(upper)
    hw = np.linspace(w_lo, w_hi, n)
    xs = np.array([spec.x(w) for w in hw])
    xs[0], xs[-1] = lower, upper
    inner = xs[1:-1]
    log_tail = analytic.log_invp_tail(model, lower, upper, inner)
    log_invp = -analytic.log_scale(model, inner, upper)
    R = np.empty(n)
    R[1:-1] = np.exp(np.log(upper - inner) + log_invp - log_tail)
    R[-1] = 1.0
    # at the lower end extrapolate linearly in w
    R[0] = R[1] + (R[1] - R[2]) if n > 2 else R[1]
    R[0] = max(R[0], 0.0)
    return hw, R


def _check(status: int, what: str, t: float, w: float, steps: int, spec: _Spec):
    if status == K.BUDGET:
        raise StepBudgetExceeded(f"{what}: step budget exhausted", t, spec.x(w) if math.isfinite(w) else w, steps)
    if status == K.OUT_OF_TABLE:
        raise DomainError(f"{what}: path left the tabulated coefficient range")
    if status == K.REJECTIONS:
        raise RejectionBudgetExceeded(f"{what}: rejection budget exhausted")


# -- batch machinery ------------------------------------------------------------


def _run_ids(task, spec: _Spec, ids: np.ndarray, extra: tuple):
    return [task(spec, int(i), extra) for i in ids]


def _map_paths(task, spec: _Spec, n: int, extra: tuple, workers: int, first_id: int = 0) -> list:
    """Apply ``task`` to path ids ``first_id .. first_id+n-1``; results in path order."""
    ids = np.arange(first_id, first_id + n)
    if workers <= 1 or n < 2:
        return _run_ids(task, spec, ids, extra)
    chunks = np.array_split(ids, min(n, workers * 4))
    method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
    with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context(method)) as ex:
        futs = [ex.submit(_run_ids, task, spec, c, extra) for c in chunks if c.size]
        out = []
        for f in futs:
            out.extend(f.result())
    return out


def _task_hit(spec: _Spec, i: int, extra):
    w0, lo, hi = extra
    rng = _stream(spec.key, TAG_HIT, i)
    st, t, w, wm, steps = K.path_until_hit(w0, lo, hi, *spec.args(), rng)
    _check(st, f"path {i}", t, w, steps, spec)
    return st, t, spec.x(wm), steps


def _task_cycle(spec: _Spec, i: int, extra):
    wa, wb, wz, cond, hw, hR = extra
    rng = _stream(spec.key, TAG_CYCLE, i)
    st, tau, sig, wm, spike, tsp, steps = K.one_cycle(wa, wb, wz, cond, 0.0, *spec.args(), hw, hR, rng, 0)
    if st != K.LOW:
        _check(st, f"cycle {i}", sig, math.nan, steps, spec)
    return tau, sig, spec.x(wm), bool(spike), tsp


def _task_reject(spec: _Spec, i: int, extra):
    wb, wa, wz, max_trials = extra
    rng = _stream(spec.key, TAG_REJECT, i)
    st, t, trials, steps = K.downcross_rejection(wb, wa, wz, max_trials, *spec.args(), rng)
    if st != K.LOW:
        _check(st, f"rejection sample {i}", t, math.nan, steps, spec)
    return t, trials


def _task_hdown(spec: _Spec, i: int, extra):
    wb, wa, wz, hw, hR = extra
    rng = _stream(spec.key, TAG_HDOWN, i)
    st, t, wm, steps = K.downcross_h(wb, wa, wz, *spec.args(), hw, hR, rng)
    if st != K.LOW:
        _check(st, f"conditioned sample {i}", t, math.nan, steps, spec)
    if wm >= wz:
        raise AssertionError("conditioned path touched the avoided level")
    return t, spec.x(wm)


def _task_spikes(spec: _Spec, i: int, extra):
    wa, wb, wz, horizon = extra
    cap = 64
    while True:
        rng = _stream(spec.key, TAG_SPIKES, i)
        buf = np.empty(cap)
        st, n_cross, n_comp, n_incl, n_cyc, steps = K.spike_train(wa, wb, wz, horizon, *spec.args(), rng, buf)
        if st != K.LOW:
            _check(st, f"spike run {i}", horizon, math.nan, steps, spec)
        if n_cross <= cap:
            return buf[:n_cross].copy(), n_cyc, n_comp, n_incl
        cap = 2 * n_cross


def _task_hitx(spec: _Spec, i: int, extra):
    wx, wa, wb, wz = extra
    rng = _stream(spec.key, TAG_HITX, i)
    st, t, via, ncyc, steps = K.hit_from_x(wx, wa, wb, wz, *spec.args(), rng)
    if st != K.HIGH:
        _check(st, f"hitting sample {i}", t, math.nan, steps, spec)
    return t, bool(via), ncyc


def _workers(config: SimConfig, workers: int | None) -> int:
    return config.workers if workers is None else int(workers)


# -- public API ------------------------------------------------------------------


def simulate_until_hit(model: DiffusionModel, x0: float, low: float, high: float,
                       config: SimConfig = SimConfig(), seed: int = 0) -> HitResult:
    """Simulate one path from ``x0`` until it leaves ``(low, high)``.

    ``seed`` selects the path stream under ``config.rng_master_seed``.
    ``low`` may be 0 and ``high`` may be ``inf`` (no barrier).
    """
    if not (0 <= low <= x0 <= high) or not low < high:
        raise DomainError(f"need low <= x0 <= high, got ({low}, {x0}, {high})")
    if x0 == low:
        return HitResult(Which.Low, 0.0, x0, 0)
    if x0 == high:
        return HitResult(Which.High, 0.0, x0, 0)
    spec = _spec(model, config)
    lo_w = spec.w(low) if low > 0 else -math.inf
    st, t, xm, steps = _task_hit(spec, seed, (spec.w(x0), lo_w, spec.w(high)))
    return HitResult(Which.High if st == K.HIGH else Which.Low, t, xm, steps)


def simulate_hits(model: DiffusionModel, x0: float, low: float, high: float, n_paths: int,
                  config: SimConfig = SimConfig(), workers: int | None = None) -> dict:
    """Batch of :func:`simulate_until_hit` over path ids ``0 .. n_paths-1``.

    Returns a dict of arrays ``high`` (bool), ``time``, ``max_level``, ``steps``.
    """
    if not (0 <= low < x0 < high):
        raise DomainError("need low < x0 < high")
    spec = _spec(model, config)
    lo_w = spec.w(low) if low > 0 else -math.inf
    res = _map_paths(_task_hit, spec, n_paths, (spec.w(x0), lo_w, spec.w(high)), _workers(config, workers))
    st, t, xm, steps = (np.array(v) for v in zip(*res))
    return dict(high=st == K.HIGH, time=t.astype(float), max_level=xm.astype(float), steps=steps.astype(np.int64))


def _cycle_levels(model: DiffusionModel, boundaries: CycleBoundaries, z: float):
    alpha, beta = boundaries.at(model.eps)
    if not z > beta:
        raise DomainError(f"need z > beta(eps)={beta}")
    return alpha, beta


def sample_cycles(model: DiffusionModel, boundaries: CycleBoundaries, z: float, n: int,
                  config: SimConfig = SimConfig(), conditioned: bool = False,
                  workers: int | None = None, first_id: int = 0) -> list[CycleRecord]:
    """``n`` independent cycles started at ``alpha(eps)``."""
    alpha, beta = _cycle_levels(model, boundaries, z)
    spec = _spec(model, config)
    hw = hR = _DUMMY
    if conditioned:
        hw, hR = _h_table(model, spec, alpha, z, config.h_table_size)
    extra = (spec.w(alpha), spec.w(beta), spec.w(z), conditioned, hw, hR)
    res = _map_paths(_task_cycle, spec, n, extra, _workers(config, workers), first_id)
    out = []
    for tau, sig, xm, spike, tsp in res:
        if conditioned and xm >= z:
            raise AssertionError("conditioned cycle touched z")
        out.append(CycleRecord(tau, sig, xm, spike, conditioned, tsp))
    return out


def sample_cycle(model: DiffusionModel, boundaries: CycleBoundaries, z: float,
                 config: SimConfig = SimConfig(), seed: int = 0, conditioned: bool = False) -> CycleRecord:
    """One cycle: up from ``alpha`` to ``beta``, then down to ``alpha``.

    Unconditioned down-phases that reach ``z`` record a spike and continue
    from ``z``; conditioned ones use the h-transformed drift and never
    reach ``z``.
    """
    return sample_cycles(model, boundaries, z, 1, config, conditioned, workers=1, first_id=seed)[0]


def sample_downcross_rejection(model: DiffusionModel, boundaries: CycleBoundaries, z: float, n: int,
                               config: SimConfig = SimConfig(), max_trials: int = 10**6,
                               workers: int | None = None) -> dict:
    """Conditioned down-crossing times by rejection; returns ``time`` and ``trials`` arrays."""
    alpha, beta = _cycle_levels(model, boundaries, z)
    spec = _spec(model, config)
    res = _map_paths(_task_reject, spec, n, (spec.w(beta), spec.w(alpha), spec.w(z), int(max_trials)),
                     _workers(config, workers))
    t, trials = (np.array(v) for v in zip(*res))
    return dict(time=t.astype(float), trials=trials.astype(np.int64))


def sample_conditioned_downcross_rejection(model: DiffusionModel, boundaries: CycleBoundaries, z: float,
                                           config: SimConfig = SimConfig(), seed: int = 0,
                                           max_trials: int = 10**6) -> float:
    """One down-crossing from ``beta`` to ``alpha`` conditioned to avoid ``z``, by rejection."""
    alpha, beta = _cycle_levels(model, boundaries, z)
    spec = _spec(model, config)
    return _task_reject(spec, seed, (spec.w(beta), spec.w(alpha), spec.w(z), int(max_trials)))[0]


def sample_downcross_htransform(model: DiffusionModel, boundaries: CycleBoundaries, z: float, n: int,
                                config: SimConfig = SimConfig(), workers: int | None = None) -> dict:
    """Conditioned down-crossing times under the h-transformed drift.

    Returns ``time`` and ``max_level`` arrays.  Every path is checked to
    stay strictly below ``z``.
    """
    alpha, beta = _cycle_levels(model, boundaries, z)
    spec = _spec(model, config)
    hw, hR = _h_table(model, spec, alpha, z, config.h_table_size)
    res = _map_paths(_task_hdown, spec, n, (spec.w(beta), spec.w(alpha), spec.w(z), hw, hR),
                     _workers(config, workers))
    t, xm = (np.array(v, dtype=float) for v in zip(*res))
    return dict(time=t, max_level=xm)


def run_spike_processes(model: DiffusionModel, boundaries: CycleBoundaries, z: float, horizon: float,
                        n_runs: int, config: SimConfig = SimConfig(), workers: int | None = None,
                        first_id: int = 0) -> list[SpikeTrain]:
    """Independent spike trains on ``[0, horizon]`` (model clock)."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    alpha, beta = boundaries.at(model.eps)
    spec = _spec(model, config)
    if z <= beta:
        # every down-phase starts at or above z, so every cycle spikes on reaching beta
        wz = spec.w(beta)
    else:
        wz = spec.w(z)
    res = _map_paths(_task_spikes, spec, n_runs, (spec.w(alpha), spec.w(beta), wz, float(horizon)),
                     _workers(config, workers), first_id)
    return [SpikeTrain(float(horizon), t, int(nc), int(ncomp), int(nincl)) for t, nc, ncomp, nincl in res]


def run_spike_process(model: DiffusionModel, boundaries: CycleBoundaries, z: float, horizon: float,
                      config: SimConfig = SimConfig(), seed: int = 0) -> SpikeTrain:
    """Spike train of consecutive unconditioned cycles started at ``alpha(eps)``."""
    return run_spike_processes(model, boundaries, z, horizon, 1, config, workers=1, first_id=seed)[0]


def sample_hitting_times(model: DiffusionModel, x: float, z: float, boundaries: CycleBoundaries, n: int,
                         config: SimConfig = SimConfig(), workers: int | None = None) -> dict:
    """First-passage times to ``z`` from ``x``.

    The path runs from ``x`` until it reaches ``z`` or the floor
    ``alpha(eps)``; in the latter case cycles from the floor are simulated
    until one of them reaches ``z``.  Returns arrays ``time``, ``via_floor``
    and ``n_cycles``.
    """
    if not 0 < x < z:
        raise DomainError("need 0 < x < z")
    alpha, beta = boundaries.at(model.eps)
    if not beta < z:
        raise DomainError("need beta(eps) < z")
    spec = _spec(model, config)
    res = _map_paths(_task_hitx, spec, n, (spec.w(x), spec.w(alpha), spec.w(beta), spec.w(z)),
                     _workers(config, workers))
    t, via, nc = (np.array(v) for v in zip(*res))
    return dict(time=t.astype(float), via_floor=via.astype(bool), n_cycles=nc.astype(np.int64))


def sample_hitting_time_from_x(model: DiffusionModel, x: float, z: float, floor_alpha: CycleBoundaries | float,
                               config: SimConfig = SimConfig(), seed: int = 0) -> float:
    """One first-passage time to ``z`` from ``x`` (``0`` when ``x == z``).

    ``floor_alpha`` is either the cycle boundaries or the floor level
    ``alpha(eps)`` itself (``beta`` is then taken as ``2 alpha``).
    """
    if x == z:
        return 0.0
    b = floor_alpha
    if not isinstance(b, CycleBoundaries):
        a = float(b)
        b = CycleBoundaries(_Scaled(0.0, 0.0, a), _Scaled(0.0, 0.0, 2 * a), "fixed")
    spec = _spec(model, config)
    alpha, beta = b.at(model.eps)
    return _task_hitx(spec, seed, (spec.w(x), spec.w(alpha), spec.w(beta), spec.w(z)))[0]
