"""Command-line entry point.

Each subcommand reads a TOML configuration (see :mod:`spikesim.config`),
runs its quadrature and Monte Carlo workload and writes
``<out>/<command>.csv`` and ``<out>/<command>.report.json``.

Exit codes: 0 success, 1 an acceptance threshold failed, 2 configuration
error, 3 numerical failure.

CSV files start with one ``#`` comment line carrying the command name and a
UTC timestamp, followed by a header row and the data rows.  Floats are
written with 17 significant digits, so the body after the comment line is
byte-identical for identical configuration and seed, whatever the worker
count.  Column orders are fixed and listed in ``COLUMNS``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, analytic, limits, simulate, stats
from .config import ConfigError, ExperimentConfig, load_config
from .errors import DomainError, QuadratureError, RejectionBudgetExceeded, StepBudgetExceeded
from .model import DiffusionModel, Family, TaylorBounds, validate_model

log = logging.getLogger("spikesim")

COLUMNS = {
    "hitprob": ["x", "r", "R", "eps", "lam", "p_analytic", "p_analytic_err", "n_paths", "p_mc", "se",
                "ci_lo", "ci_hi", "z_score", "within_3se"],
    "cycle-moments": ["eps", "alpha", "beta", "mean_analytic", "second_analytic", "kappa_eps",
                      "kappa_extrapolated", "kappa_limit", "kappa_rel_err", "n_mc", "mc_mean", "mc_mean_se",
                      "mc_mean_z", "mc_second", "mc_second_se", "mc_second_z"],
    "spikes": ["run", "count", "count_completed", "count_inclusive", "n_cycles", "spike_times"],
    "hitting-law": ["path", "time", "via_floor", "n_cycles"],
    "scaling-sweep": ["eps", "alpha", "beta", "log_p_cal", "p_cal", "lambda", "identity_residual", "p_z",
                      "p_ratio", "inv_q_ratio", "kappa_eps", "rabi_asym_ratio", "log_z_eps", "log_pz",
                      "log_pz_limit"],
    "validate": ["x", "b1_excess", "b2_excess", "sigma2_excess", "ok"],
}

NUMERICAL_ERRORS = (QuadratureError, StepBudgetExceeded, RejectionBudgetExceeded, ArithmeticError)


@dataclass
class CommandResult:
    rows: list
    report: dict
    passed: bool
    summary: list = field(default_factory=list)


# -- helpers -----------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(command: str, rows: Sequence[Sequence], timestamp: str) -> str:
    """CSV text: comment line, header, rows."""
    buf = io.StringIO()
    buf.write(f"# spikesim {command} generated {timestamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS[command])
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, Path):
        return str(v)
    return v


def _run_eps_model(cfg: ExperimentConfig) -> tuple[DiffusionModel, float, float]:
    """Model on the scaling curve at ``cfg.run_eps``; returns ``(model, eps, lam)``."""
    eps = cfg.run_eps
    base = cfg.model.replace(eps=eps, lam=1.0)
    lam = limits.scaling_lambda(base, cfg.boundaries, cfg.z_cal, cfg.J)
    return base.replace(lam=lam), eps, lam


def kappa_for(cfg: ExperimentConfig) -> tuple[float, str]:
    """Limit ``kappa`` when a closed form applies, else the extrapolated estimate."""
    m, bd = cfg.model, cfg.raw["boundaries"]
    p = m.params
    if m.family in (Family.BBLinear, Family.AsymLinear) and bd["preset"] == "linear":
        return limits.kappa_limit_example1(p["a"], p["b"], p["s"], bd["alpha"], bd["beta"]), "limit"
    if m.family is Family.RabiLinearized and bd["preset"] == "rabi" and bd["l"] == 1.0:
        return limits.kappa_limit_rabi(p["b"]), "limit"
    est = limits.kappa_numeric(m, cfg.boundaries, cfg.z_target, cfg.eps_grid)
    return est.kappa, "extrapolated" if est.extrapolated else "smallest-eps"


def _rate(cfg: ExperimentConfig, kappa: float) -> float:
    """Limit spike rate at ``z_target`` for a curve calibrated at ``z_cal``."""
    rate = kappa * cfg.J
    if cfg.z_target != cfg.z_cal:
        rate *= limits.q_of_z(cfg.model, cfg.z_cal) / limits.q_of_z(cfg.model, cfg.z_target)
    return rate


# -- commands ------------------------------------------------------------------


def cmd_hitprob(cfg: ExperimentConfig) -> CommandResult:
    """Analytic versus Monte Carlo hitting probabilities for each ``(x, r, R)``."""
    m = cfg.model
    rows, ok = [], True
    for x, r, R in cfg.triples:
        if x == r or x == R:
            p = 0.0 if x == r else 1.0
            rows.append([x, r, R, m.eps, m.lam, p, 0.0, 0, math.nan, math.nan, math.nan, math.nan,
                         math.nan, True])
            continue
        p, err = analytic.hitting_prob(m, x, r, R, return_error=True)
        if not math.isfinite(p):
            raise QuadratureError("non-finite hitting probability", math.nan)
        n = cfg.paths
        if n == 0:
            rows.append([x, r, R, m.eps, m.lam, p, err, 0, math.nan, math.nan, math.nan, math.nan,
                         math.nan, True])
            continue
        res = simulate.simulate_hits(m, x, r, R, n, cfg.sim)
        k = int(res["high"].sum())
        phat = k / n
        se = math.sqrt(p * (1 - p) / n)
        lo, hi = stats.binomial_ci(k, n)
        zs = (phat - p) / se if se > 0 else (0.0 if phat == p else math.inf)
        within = abs(phat - p) <= 3 * se
        ok &= within
        rows.append([x, r, R, m.eps, m.lam, p, err, n, phat, se, lo, hi, zs, within])
    summary = [f"{row[0]:g} in ({row[1]:g}, {row[2]:g}): analytic {row[5]:.6g}, MC {row[8]:.6g}"
               f" (z={row[12]:.2f})" for row in rows]
    return CommandResult(rows, {"all_within_3se": ok}, ok, summary)


def cmd_cycle_moments(cfg: ExperimentConfig) -> CommandResult:
    """Per-``eps`` conditioned cycle moments, analytic and Monte Carlo, with kappa."""
    z = cfg.z_target
    est = limits.kappa_numeric(cfg.model, cfg.boundaries, z, cfg.eps_grid)
    k_lim, k_kind = kappa_for(cfg)
    rows, ok_mc = [], True
    for e, mean, second, ke in zip(est.eps, est.mean, est.second, est.kappa_eps):
        alpha, beta = cfg.boundaries.at(e)
        mc = [0, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan]
        if cfg.paths > 0:
            m = cfg.model.replace(eps=e, lam=1.0)
            recs = simulate.sample_cycles(m, cfg.boundaries, z, cfg.paths, cfg.sim, conditioned=True)
            s = np.array([rc.sigma for rc in recs])
            n = s.size
            mm, ms = s.mean(), s.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
            sm, ss = (s**2).mean(), (s**2).std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
            mc = [n, mm, ms, (mm - mean) / ms, sm, ss, (sm - second) / ss]
            ok_mc &= abs(mc[3]) <= 3 and abs(mc[6]) <= 3
        rows.append([e, alpha, beta, mean, second, ke, est.kappa, k_lim, ke / k_lim - 1, *mc])
    means, seconds, ks = np.array(est.mean), np.array(est.second), np.array(est.kappa_eps)
    gaps = np.abs(ks / k_lim - 1)
    rep = {
        "kappa_limit": k_lim, "kappa_limit_kind": k_kind, "kappa_extrapolated": est.kappa,
        "extrapolation_notes": list(est.notes),
        "monotone_approach": bool(np.all(np.diff(gaps) < 0)),
        "smallest_eps_rel_err": float(gaps[-1]),
        "second_ge_mean_sq": bool(np.all(seconds >= means**2)),
        "second_max_over_min": float(seconds.max() / seconds.min()),
        "mc_within_3se": ok_mc,
    }
    passed = (ok_mc and rep["second_ge_mean_sq"] and rep["second_max_over_min"] < 3
              and rep["smallest_eps_rel_err"] < 0.02)
    summary = [f"eps={r[0]:g}: E[cycle]={r[3]:.6g} kappa_eps={r[5]:.6g} (limit {k_lim:.6g})" for r in rows]
    return CommandResult(rows, rep, passed, summary)


def cmd_spikes(cfg: ExperimentConfig) -> CommandResult:
    """Independent spike trains along the scaling curve and their Poisson diagnostics."""
    m, eps, lam = _run_eps_model(cfg)
    z = cfg.z_target
    kappa, k_kind = kappa_for(cfg)
    rate = _rate(cfg, kappa)
    T = cfg.horizon if cfg.horizon > 0 else cfg.horizon_factor / rate
    n = cfg.paths
    if n < 2:
        raise ConfigError("spikes needs run.paths >= 2")
    trains = simulate.run_spike_processes(m, cfg.boundaries, z, T, n, cfg.sim)
    rows = [[i, tr.count, tr.count_completed, tr.count_inclusive, tr.n_cycles,
             " ".join(_fmt(t) for t in tr.times)] for i, tr in enumerate(trains)]
    counts = np.array([tr.count for tr in trains])
    expected = rate * T
    mean = float(counts.mean())
    try:
        disp, disp_p = stats.poisson_dispersion(counts)
    except DomainError:
        disp, disp_p = math.nan, math.nan
    zeros = int(np.sum(counts == 0))
    z_ci = stats.binomial_ci(zeros, n)
    p0 = math.exp(-expected)
    # runs are independent, so laid end to end they form one long train whose
    # gaps are iid exponential under the null; the final censored gap is dropped
    pooled = np.concatenate([tr.times + i * T for i, tr in enumerate(trains)])
    gaps = np.diff(np.concatenate([[0.0], pooled]))
    ks = stats.ks_exponential(gaps, rate) if gaps.size else stats.KSResult(math.nan, math.nan)
    p_spike = analytic.spike_prob(m, cfg.boundaries, z)
    ncyc = np.array([tr.n_cycles for tr in trains], dtype=float)
    tvb = limits.tv_bound(p_spike, float(np.mean(np.abs(p_spike * ncyc - expected))))
    rep = {
        "eps": eps, "lambda": lam, "kappa": kappa, "kappa_kind": k_kind, "J": cfg.J, "rate": rate,
        "horizon": T, "runs": n, "expected_count": expected, "mean_count": mean,
        "mean_count_completed": float(np.mean([tr.count_completed for tr in trains])),
        "mean_count_inclusive": float(np.mean([tr.count_inclusive for tr in trains])),
        "mean_rel_err": mean / expected - 1, "dispersion_index": disp, "dispersion_pvalue": disp_p,
        "zero_fraction": zeros / n, "zero_fraction_ci": list(z_ci), "zero_fraction_expected": p0,
        "interarrival_ks_stat": ks.stat, "interarrival_ks_pvalue": ks.pvalue, "n_gaps": int(gaps.size),
        "spike_prob": p_spike, "tv_bound": tvb,
    }
    checks = {
        "mean_within_10pct": abs(mean / expected - 1) <= 0.10,
        "dispersion_in_range": 0.9 <= disp <= 1.1,
        "zero_fraction_covered": z_ci[0] <= p0 <= z_ci[1],
    }
    rep["checks"] = checks
    summary = [f"eps={eps:g} lambda={lam:.6g} rate={rate:.6g} T={T:.6g}",
               f"mean count {mean:.4f} vs {expected:.4f}; dispersion {disp:.4f};"
               f" zero fraction {zeros / n:.4f} vs {p0:.4f}"]
    return CommandResult(rows, rep, all(checks.values()), summary)


def cmd_hitting_law(cfg: ExperimentConfig) -> CommandResult:
    """Hitting times of ``z`` from ``x`` tested against the atom-plus-exponential law."""
    m, eps, lam = _run_eps_model(cfg)
    x, z = cfg.x_start, cfg.z_target
    kappa, k_kind = kappa_for(cfg)
    rate = _rate(cfg, kappa)
    axz = limits.alpha_xz(cfg.model, x, z)
    pred = limits.LimitPrediction(kappa, cfg.J, axz, rate)
    n = cfg.paths
    if n < 1:
        raise ConfigError("hitting-law needs run.paths >= 1")
    if x == z:
        res = dict(time=np.zeros(n), via_floor=np.zeros(n, bool), n_cycles=np.zeros(n, np.int64))
        q_fin = 1.0
    else:
        res = simulate.sample_hitting_times(m, x, z, cfg.boundaries, n, cfg.sim)
        alpha, _ = cfg.boundaries.at(eps)
        q_fin = analytic.hitting_prob(m, x, alpha, z)
    rows = [[i, t, v, c] for i, (t, v, c) in enumerate(zip(res["time"], res["via_floor"], res["n_cycles"]))]
    t0 = 0.05 / rate
    grid = sorted({t0, *(f / rate for f in stats.DEFAULT_T0_FACTORS)})
    reps = stats.mixture_test(res["time"], pred, grid)
    reps_sc = stats.mixture_test(res["time"], pred, grid, self_calibrated=True)
    main = next(r for r in reps if r.t0 == t0)
    atom_ok = abs(main.atom_fraction_hat - pred.atom_weight) <= 0.05
    ks_ok = main.degenerate or main.ks_pvalue > 0.01
    rep = {
        "eps": eps, "lambda": lam, "kappa": kappa, "kappa_kind": k_kind, "rate": rate, "alpha_xz": axz,
        "atom_weight": pred.atom_weight, "t0": t0, "n": n,
        "atom_weight_finite_eps": q_fin,
        "atom_fraction_memoryless_corrected": q_fin + (1 - q_fin) * -math.expm1(-rate * t0),
        "mean_time": float(np.mean(res["time"])), "via_floor_fraction": float(np.mean(res["via_floor"])),
        "mixture_tests": [r.to_dict() for r in reps],
        "mixture_tests_self_calibrated": [r.to_dict() for r in reps_sc],
        "checks": {"atom_within_0.05": atom_ok, "tail_ks_1pct": ks_ok},
    }
    summary = [f"eps={eps:g} lambda={lam:.6g} rate={rate:.6g}",
               f"fraction below t0={t0:.4g}: {main.atom_fraction_hat:.4f} (limit {pred.atom_weight:.4f});"
               f" tail KS p={main.ks_pvalue:.4g}"]
    return CommandResult(rows, rep, atom_ok and ks_ok, summary)


def cmd_scaling_sweep(cfg: ExperimentConfig) -> CommandResult:
    """Per-``eps`` table along the scaling curve."""
    z, zc, J = cfg.z_target, cfg.z_cal, cfg.J
    fam = cfg.model.family
    b = cfg.model.params.get("b", 1.0)
    inv_q = limits.q_of_z(cfg.model, zc) / limits.q_of_z(cfg.model, z)
    zdiag = {}
    if fam is Family.RabiLinearized:
        zdiag = {r["eps"]: r for r in limits.zeps_diagnostic(b, cfg.eps_grid, zc)}
    rows, worst = [], 0.0
    for e in cfg.eps_grid:
        m = cfg.model.replace(eps=e, lam=1.0)
        alpha, beta = cfg.boundaries.at(e)
        lp = float(analytic.log_spike_prob(m, cfg.boundaries, zc))
        lam = math.exp(0.5 * (math.log(J) - lp))
        resid = math.expm1(2 * math.log(lam) + lp - math.log(J))
        worst = max(worst, abs(resid))
        lpz = float(analytic.log_spike_prob(m, cfg.boundaries, z))
        ke = analytic.cycle_moments(m, cfg.boundaries, max(z, zc)).kappa
        asym = math.nan
        if fam is Family.RabiLinearized and cfg.raw["boundaries"]["preset"] == "rabi":
            la = limits.log_rabi_spike_prob_asymptotic(b, e, cfg.raw["boundaries"]["l"], zc)
            asym = math.exp(lp - la)
        zr = zdiag.get(float(e), {})
        rows.append([e, alpha, beta, lp, math.exp(lp), lam, resid, math.exp(lpz), math.exp(lpz - lp), inv_q,
                     ke, asym, zr.get("log_z_eps", math.nan), zr.get("log_pz", math.nan),
                     zr.get("log_pz_limit", math.nan)])
    rep = {"max_identity_residual": worst, "inv_q_ratio": inv_q}
    summary = [f"eps={r[0]:g}: p={r[4]:.6g} lambda={r[5]:.6g} p_z/p_cal={r[8]:.6g}" for r in rows]
    return CommandResult(rows, rep, worst < 1e-10, summary)


def cmd_validate(cfg: ExperimentConfig) -> CommandResult:
    """Check the Taylor remainder bounds and the boundary functions over the grid."""
    m = cfg.model
    bounds, grid = cfg.taylor, cfg.taylor_grid
    rows, passed = [], True
    rep: dict = {"family": m.family.value}
    if bounds is None and m.family in (Family.BBLinear, Family.AsymLinear):
        p = m.params
        M = max(1.0, abs(p["a1"]) + p["c2"] + p["c3"])
        bounds = TaylorBounds(p["a"], p["b"], p["s"], M, 0.5 * min(p["a"], p["b"], p["s"] ** 2) / (2 * M))
        rep["taylor_defaulted"] = True
    if bounds is not None:
        if grid is None:
            grid = tuple(np.geomspace(bounds.delta0 * 1e-4, bounds.delta0, 64))
        vr = validate_model(m, bounds, grid)
        rows = [list(r) for r in vr.rows]
        passed = vr.passed
        rep["taylor"] = {"a": bounds.a, "b": bounds.b, "sigma_prime": bounds.sigma_prime, "M": bounds.M,
                         "delta0": bounds.delta0, "passed": vr.passed}
    bchecks = []
    for e in cfg.eps_grid:
        a, b = cfg.boundaries.at(e)
        bchecks.append({"eps": e, "alpha": a, "beta": b, "beta_below_z": b < cfg.z_target})
    rep["boundaries"] = bchecks
    passed &= all(c["beta_below_z"] for c in bchecks)
    summary = [f"Taylor bounds: {'passed' if passed else 'FAILED'} on {len(rows)} points"]
    return CommandResult(rows, rep, passed, summary)


COMMANDS: dict[str, Callable[[ExperimentConfig], CommandResult]] = {
    "hitprob": cmd_hitprob,
    "cycle-moments": cmd_cycle_moments,
    "spikes": cmd_spikes,
    "hitting-law": cmd_hitting_law,
    "scaling-sweep": cmd_scaling_sweep,
    "validate": cmd_validate,
}


# -- entry point ---------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--workers", type=int, help="worker processes (overrides run.workers)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    p = argparse.ArgumentParser(prog="spikesim", description="Stochastic spike experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0])
    return p


def _setup_logging():
    level = os.environ.get("SPIKESIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _write_outputs(cfg: ExperimentConfig, command: str, res: CommandResult, timestamp: str) -> list[Path]:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in cfg.formats:
        path = out / f"{command}.csv"
        path.write_text(render_csv(command, res.rows, timestamp))
        written.append(path)
    if "json" in cfg.formats:
        path = out / f"{command}.report.json"
        doc = {"command": command, "version": __version__, "generated": timestamp, "passed": res.passed,
               "config": cfg.raw, "seed": cfg.seed, "workers": cfg.workers, "results": res.report}
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.workers, args.out)
    except ConfigError as e:
        print(f"spikesim: configuration error: {e}", file=sys.stderr)
        return 2
    timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    try:
        res = COMMANDS[args.command](cfg)
    except NUMERICAL_ERRORS as e:
        print(f"spikesim: numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except (ConfigError, DomainError) as e:
        print(f"spikesim: configuration error: {e}", file=sys.stderr)
        return 2
    for path in _write_outputs(cfg, args.command, res, timestamp):
        log.info("wrote %s", path)
    for line in res.summary:
        print(line)
    print(f"{args.command}: {'PASS' if res.passed else 'FAIL'}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
