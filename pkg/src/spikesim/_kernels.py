"""Compiled Euler-Maruyama path kernels.

Paths are advanced in a working coordinate ``w``: either ``w = x``
(native scheme) or the unit-diffusion coordinate ``w = F(x)``
(transformed scheme).  All routines take a ``numpy.random.Generator`` so
that every path owns an independent counter-based stream.

Status codes returned by the kernels::

    0  left through the lower barrier
    1  left through the upper barrier
    2  horizon reached
    3  step budget exhausted
    4  left the tabulated coefficient range (custom models)
    5  rejection budget exhausted
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# model parameter layout
P_EPS, P_LAM, P_A, P_A1, P_B, P_C2, P_C3, P_S = range(8)
# step-control layout
C_DTMAX, C_DTMIN, C_CDRIFT, C_CBAR, C_BRIDGE, C_NOISE, C_BUDGET = range(7)

FAM_LINEAR_NOISE = 0   # sigma = s x
FAM_QUADRATIC_NOISE = 1  # sigma = x^2
FAM_TABULATED = 2      # custom coefficients, native scheme only

LOW, HIGH, HORIZON, BUDGET, OUT_OF_TABLE, REJECTIONS = 0, 1, 2, 3, 4, 5

_opts = dict(cache=True, error_model="numpy")


@njit(**_opts)
def to_x(w, fam, scheme, prm):
    if scheme == 0:
        return w
    if fam == FAM_LINEAR_NOISE:
        return math.exp(prm[P_S] * w)
    return -1.0 / w


@njit(**_opts)
def to_w(x, fam, scheme, prm):
    if scheme == 0:
        return x
    if fam == FAM_LINEAR_NOISE:
        return math.log(x) / prm[P_S]
    return -1.0 / x


@njit(**_opts)
def coef(x, fam, prm, tx, tmu, tsig):
    """Return ``(mu, sigma, sigma')`` with drift ``lam^2 mu``; ``sigma < 0`` flags a table miss."""
    if fam == FAM_TABULATED:
        lx = math.log(x)
        if lx < tx[0] or lx > tx[-1]:
            return 0.0, -1.0, 0.0
        return np.interp(lx, tx, tmu), np.interp(lx, tx, tsig), 0.0
    b1 = prm[P_A] + prm[P_A1] * x / (1.0 + x)
    b2 = x * (prm[P_B] + x * (prm[P_C2] + x * prm[P_C3]))
    mu = 0.5 * (prm[P_EPS] * b1 - b2)
    if fam == FAM_LINEAR_NOISE:
        return mu, prm[P_S] * x, prm[P_S]
    return mu, x * x, 2.0 * x


@njit(**_opts)
def exit_interval(w, lo, hi, t, t_end, fam, scheme, prm, cfg, tx, tmu, tsig,
                  hcorr, wz, hw, hR, rng, steps):
    """Advance one path until it leaves ``(lo, hi)`` or the clock reaches ``t_end``.

    With ``hcorr`` the drift of the process conditioned to avoid ``wz`` is
    used and steps that would reach ``wz`` are retried with a smaller step.

    Returns ``(status, t, w, wmax, steps)``.
    """
    lam = prm[P_LAM]
    lam2 = lam * lam
    dt_max = cfg[C_DTMAX] / lam2
    dt_min = cfg[C_DTMIN] / lam2
    c_drift = cfg[C_CDRIFT]
    c_bar = cfg[C_CBAR]
    bridge = cfg[C_BRIDGE] > 0.0
    noise = cfg[C_NOISE]
    budget = cfg[C_BUDGET]
    native = scheme == 0
    xz = to_x(wz, fam, scheme, prm) if hcorr else np.inf
    wmax = w
    if w <= lo:
        return LOW, t, w, wmax, steps
    if w >= hi:
        return HIGH, t, w, wmax, steps
    while True:
        if steps >= budget:
            return BUDGET, t, w, wmax, steps
        if t >= t_end:
            return HORIZON, t, w, wmax, steps
        x = to_x(w, fam, scheme, prm)
        mu, sg, dsg = coef(x, fam, prm, tx, tmu, tsig)
        if sg < 0.0:
            return OUT_OF_TABLE, t, w, wmax, steps
        if native:
            d = mu
            s = sg
        else:
            d = mu / sg - 0.5 * dsg
            s = 1.0
        if hcorr:
            hp = -np.interp(w, hw, hR) / (xz - x)
            d += (sg * sg if native else sg) * hp
        s *= noise
        dist = min(w - lo, hi - w)
        if native:
            dist = min(dist, w)
        if hcorr:
            dist = min(dist, wz - w)
        dt = dt_max
        if s > 0.0:
            if d != 0.0:
                dt = min(dt, c_drift * s * s / (lam2 * d * d))
            dt = min(dt, c_bar * dist * dist / (lam2 * s * s))
        elif d != 0.0:
            dt = min(dt, 0.5 * dist / (lam2 * abs(d)))
        dt = max(dt, dt_min)
        dt = min(dt, t_end - t)
        while True:
            steps += 1
            w1 = w + lam2 * d * dt + lam * s * math.sqrt(dt) * rng.standard_normal()
            bad = (native and w1 <= 0.0) or (hcorr and w1 >= wz) or \
                  (not native and fam == FAM_QUADRATIC_NOISE and w1 >= 0.0)
            if not bad:
                break
            if steps >= budget:
                return BUDGET, t, w, wmax, steps
            dt *= 0.25
        if w1 <= lo:
            return LOW, t + dt * (w - lo) / (w - w1), lo, wmax, steps
        if w1 >= hi:
            return HIGH, t + dt * (hi - w) / (w1 - w), hi, hi, steps
        if bridge and s > 0.0:
            v = lam2 * s * s * dt
            dw2 = (w1 - w) * (w1 - w)
            if hi < np.inf:
                top = 0.5 * (w + w1 + math.sqrt(dw2 - 2.0 * v * math.log(1.0 - rng.random())))
                if top >= hi:
                    return HIGH, t + 0.5 * dt, hi, hi, steps
                wmax = max(wmax, top)
            if lo > -np.inf:
                bot = 0.5 * (w + w1 - math.sqrt(dw2 - 2.0 * v * math.log(1.0 - rng.random())))
                if bot <= lo:
                    return LOW, t + 0.5 * dt, lo, wmax, steps
        wmax = max(wmax, w1)
        t += dt
        w = w1


@njit(**_opts)
def path_until_hit(w0, lo, hi, fam, scheme, prm, cfg, tx, tmu, tsig, rng):
    dummy = np.zeros(1)
    return exit_interval(w0, lo, hi, 0.0, np.inf, fam, scheme, prm, cfg, tx, tmu, tsig,
                         False, np.inf, dummy, dummy, rng, 0)


@njit(**_opts)
def one_cycle(wa, wb, wz, conditioned, t0, fam, scheme, prm, cfg, tx, tmu, tsig, hw, hR, rng, steps):
    """One regeneration cycle from ``wa``.

    Returns ``(status, tau, sigma, wmax, spike, t_spike, steps)``.
    """
    st, t, w, wmax, steps = exit_interval(wa, -np.inf, wb, t0, np.inf, fam, scheme, prm, cfg,
                                          tx, tmu, tsig, False, np.inf, hw, hR, rng, steps)
    if st != HIGH:
        return st, t, t, wmax, False, np.nan, steps
    tau = t
    if conditioned:
        st, t, w, wm, steps = exit_interval(wb, wa, np.inf, t, np.inf, fam, scheme, prm, cfg,
                                            tx, tmu, tsig, True, wz, hw, hR, rng, steps)
        return st, tau, t, max(wmax, wm), False, np.nan, steps
    st, t, w, wm, steps = exit_interval(wb, wa, wz, t, np.inf, fam, scheme, prm, cfg,
                                        tx, tmu, tsig, False, np.inf, hw, hR, rng, steps)
    wmax = max(wmax, wm)
    if st != HIGH:
        return st, tau, t, wmax, False, np.nan, steps
    t_spike = t
    st, t, w, wm, steps = exit_interval(wz, wa, np.inf, t, np.inf, fam, scheme, prm, cfg,
                                        tx, tmu, tsig, False, np.inf, hw, hR, rng, steps)
    return st, tau, t, max(wmax, wm), True, t_spike, steps


@njit(**_opts)
def spike_train(wa, wb, wz, horizon, fam, scheme, prm, cfg, tx, tmu, tsig, rng, times):
    """Consecutive unconditioned cycles from ``wa`` until a cycle starts after ``horizon``.

    Spike times up to ``horizon`` are written to ``times``; when more than
    ``times.size`` occur the count is still exact and the caller retries
    with a larger buffer.

    Returns ``(status, n_cross, n_completed, n_inclusive, n_cycles, steps)``:
    spikes whose crossing time is within the horizon, spikes of cycles
    completed within the horizon, spikes of all cycles started before the
    horizon, and the number of completed cycles.
    """
    dummy = np.zeros(1)
    t = 0.0
    steps = 0
    n_cross = 0
    n_comp = 0
    n_incl = 0
    n_cyc = 0
    while t < horizon:
        st, tau, sig, wmax, spike, t_sp, steps = one_cycle(wa, wb, wz, False, t, fam, scheme, prm, cfg,
                                                             tx, tmu, tsig, dummy, dummy, rng, steps)
        if st != LOW:
            return st, n_cross, n_comp, n_incl, n_cyc, steps
        if spike:
            n_incl += 1
            if t_sp <= horizon:
                if n_cross < times.size:
                    times[n_cross] = t_sp
                n_cross += 1
            if sig <= horizon:
                n_comp += 1
        if sig <= horizon:
            n_cyc += 1
        t = sig
    return LOW, n_cross, n_comp, n_incl, n_cyc, steps


@njit(**_opts)
def hit_from_x(wx, wa, wb, wz, fam, scheme, prm, cfg, tx, tmu, tsig, rng):
    """First passage to ``wz`` from ``wx``, composed of cycles below ``wa``.

    Returns ``(status, time, via_floor, n_cycles, steps)``; ``via_floor``
    tells whether the path touched ``wa`` before ``wz``.
    """
    dummy = np.zeros(1)
    lo = wa if wx > wa else -np.inf
    st, t, w, wm, steps = exit_interval(wx, lo, wz, 0.0, np.inf, fam, scheme, prm, cfg,
                                        tx, tmu, tsig, False, np.inf, dummy, dummy, rng, 0)
    if st != LOW:
        return st, t, False, 0, steps
    n = 0
    while True:
        st, t, w, wm, steps = exit_interval(wa, -np.inf, wb, t, np.inf, fam, scheme, prm, cfg,
                                            tx, tmu, tsig, False, np.inf, dummy, dummy, rng, steps)
        if st != HIGH:
            return st, t, True, n, steps
        st, t, w, wm, steps = exit_interval(wb, wa, wz, t, np.inf, fam, scheme, prm, cfg,
                                            tx, tmu, tsig, False, np.inf, dummy, dummy, rng, steps)
        n += 1
        if st != LOW:
            return st, t, True, n, steps


@njit(**_opts)
def downcross_rejection(wb, wa, wz, max_trials, fam, scheme, prm, cfg, tx, tmu, tsig, rng):
    """Repeat down-phases from ``wb`` until one reaches ``wa`` before ``wz``.

    Returns ``(status, time, trials, steps)``.
    """
    dummy = np.zeros(1)
    steps = 0
    for k in range(1, max_trials + 1):
        st, t, w, wm, steps = exit_interval(wb, wa, wz, 0.0, np.inf, fam, scheme, prm, cfg,
                                            tx, tmu, tsig, False, np.inf, dummy, dummy, rng, steps)
        if st == LOW:
            return LOW, t, k, steps
        if st != HIGH:
            return st, t, k, steps
    return REJECTIONS, np.nan, max_trials, steps


@njit(**_opts)
def downcross_h(wb, wa, wz, fam, scheme, prm, cfg, tx, tmu, tsig, hw, hR, rng):
    """Down-phase from ``wb`` to ``wa`` under the conditioned drift.

    Returns ``(status, time, wmax, steps)``.
    """
    st, t, w, wm, steps = exit_interval(wb, wa, np.inf, 0.0, np.inf, fam, scheme, prm, cfg,
                                        tx, tmu, tsig, True, wz, hw, hR, rng, 0)
    return st, t, wm, steps
