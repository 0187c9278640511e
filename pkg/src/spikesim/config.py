"""Experiment configuration files.

Configurations are TOML documents with a top-level ``schema_version`` and
the tables ``model``, ``boundaries``, ``scaling``, ``run``, ``sim`` and
``output``.  Unknown keys anywhere are errors.  Every table is optional and
falls back to the defaults below.

Schema (version 1)::

    schema_version = 1

    [model]
    family = "BBLinear"        # BBLinear | RabiLinearized | AsymLinear
    b = 1.0
    eps = 0.0                  # used by hitprob only
    lam = 1.0                  # used by hitprob only
    a = 1.0                    # AsymLinear: b1 = a + a1 x/(1+x)
    a1 = 0.0
    sigma_prime = 1.0          # AsymLinear: sigma = sigma_prime x
    c2 = 0.0                   # AsymLinear: b2 = b x + c2 x^2 + c3 x^3
    c3 = 0.0

    [model.taylor]             # optional; used by `validate`
    M = 1.0
    delta0 = 0.1
    grid = [0.001, 0.01, 0.1]  # optional; default is 64 log-spaced points

    [boundaries]
    preset = "linear"          # linear: alpha*eps, beta*eps
    alpha = 1.0                #   (multipliers)
    beta = 2.0
    l = 1.0                    # rabi: eps/b, eps/b + l eps^2

    [scaling]
    J = 1.0
    z_cal = 1.0
    eps_grid = [0.1, 0.05, 0.02]   # strictly decreasing

    [run]
    paths = 1000
    horizon = 0.0              # 0: horizon_factor / (kappa J)
    horizon_factor = 2.0
    x_start = 0.5
    z_target = 1.0
    eps = 0.0                  # 0: last entry of scaling.eps_grid
    seed = 0
    workers = 1
    triples = [[1.5, 1.0, 2.0]]    # hitprob (x, r, R)

    [sim]                      # fields of SimConfig
    scheme = "EulerTransformed"
    dt_max = 1e-3
    dt_min = 1e-9
    c_drift = 0.1
    c_bar = 0.25
    barrier_refine = true
    max_steps = 1000000000
    h_table_size = 4096

    [output]
    directory = "results"
    formats = ["csv", "json"]
"""

from __future__ import annotations

import copy
import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DomainError
from .model import CycleBoundaries, DiffusionModel, Family, TaylorBounds
from .simulate import Scheme, SimConfig

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA_VERSION", "load_config", "parse_config"]

SCHEMA_VERSION = 1

_DEFAULTS: dict[str, Any] = {
    "model": {"family": "BBLinear", "b": 1.0, "eps": 0.0, "lam": 1.0, "a": 1.0, "a1": 0.0,
              "sigma_prime": 1.0, "c2": 0.0, "c3": 0.0, "taylor": None},
    "boundaries": {"preset": "linear", "alpha": 1.0, "beta": 2.0, "l": 1.0},
    "scaling": {"J": 1.0, "z_cal": 1.0, "eps_grid": [0.1, 0.05, 0.02]},
    "run": {"paths": 1000, "horizon": 0.0, "horizon_factor": 2.0, "x_start": 0.5, "z_target": 1.0,
            "eps": 0.0, "seed": 0, "workers": 1, "triples": [[1.5, 1.0, 2.0]]},
    "sim": {"scheme": "EulerTransformed", "dt_max": 1e-3, "dt_min": 1e-9, "c_drift": 0.1, "c_bar": 0.25,
            "barrier_refine": True, "max_steps": 10**9, "h_table_size": 4096},
    "output": {"directory": "results", "formats": ["csv", "json"]},
}
_TAYLOR_KEYS = {"M", "delta0", "grid"}
_FORMATS = {"csv", "json"}


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed configuration; ``raw`` keeps the merged tables for reports."""

    model: DiffusionModel
    boundaries: CycleBoundaries
    J: float
    z_cal: float
    eps_grid: tuple
    paths: int
    horizon: float
    horizon_factor: float
    x_start: float
    z_target: float
    eps: float
    seed: int
    workers: int
    triples: tuple
    sim: SimConfig
    out_dir: Path
    formats: tuple
    taylor: TaylorBounds | None = None
    taylor_grid: tuple | None = None
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def run_eps(self) -> float:
        """``eps`` for single-``eps`` commands: ``run.eps`` or the last grid entry."""
        return self.eps if self.eps > 0 else self.eps_grid[-1]

    def with_overrides(self, seed: int | None = None, workers: int | None = None,
                       out: str | Path | None = None) -> "ExperimentConfig":
        """Apply command-line overrides."""
        ch: dict[str, Any] = {}
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            ch["seed"] = int(seed)
            ch["sim"] = self.sim.replace(rng_master_seed=int(seed))
        if workers is not None:
            if workers < 1:
                raise ConfigError("--workers must be at least 1")
            ch["workers"] = int(workers)
            ch["sim"] = ch.get("sim", self.sim).replace(workers=int(workers))
        if out is not None:
            ch["out_dir"] = Path(out)
        return dataclasses.replace(self, **ch)


def _merge(section: str, given: Any) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"[{section}] must be a table")
    base = copy.deepcopy(_DEFAULTS[section])
    unknown = set(given) - set(base)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    for k, v in given.items():
        ref = base[k]
        if isinstance(ref, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{section}.{k} must be a boolean")
        elif isinstance(ref, (int, float)) and not isinstance(ref, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{section}.{k} must be a number")
            if isinstance(ref, int) and not isinstance(ref, bool) and k in ("paths", "seed", "workers",
                                                                            "max_steps", "h_table_size"):
                if int(v) != v:
                    raise ConfigError(f"{section}.{k} must be an integer")
                v = int(v)
        elif isinstance(ref, str) and not isinstance(v, str):
            raise ConfigError(f"{section}.{k} must be a string")
        elif isinstance(ref, list) and not isinstance(v, list):
            raise ConfigError(f"{section}.{k} must be an array")
        base[k] = v
    return base


def _positive(name: str, v: float) -> float:
    if not (v > 0 and math.isfinite(v)):
        raise ConfigError(f"{name} must be positive and finite, got {v}")
    return float(v)


def _build_model(m: dict) -> DiffusionModel:
    try:
        fam = Family(m["family"])
    except ValueError:
        raise ConfigError(f"model.family must be one of BBLinear, RabiLinearized, AsymLinear; got {m['family']!r}")
    if fam is Family.Custom:
        raise ConfigError("custom models are available from Python only")
    if m["eps"] < 0:
        raise ConfigError("model.eps must be nonnegative")
    _positive("model.lam", m["lam"])
    _positive("model.b", m["b"])
    if fam is Family.BBLinear:
        return DiffusionModel.bb_linear(m["b"], lam=m["lam"], eps=m["eps"])
    if fam is Family.RabiLinearized:
        return DiffusionModel.rabi_linearized(m["b"], lam=m["lam"], eps=m["eps"])
    return DiffusionModel.asym_linear(m["a"], m["b"], m["sigma_prime"], a1=m["a1"], c2=m["c2"],
                                      c3=m["c3"], lam=m["lam"], eps=m["eps"])


def _build_boundaries(bd: dict, model: DiffusionModel) -> CycleBoundaries:
    if bd["preset"] == "linear":
        return CycleBoundaries.linear(bd["alpha"], bd["beta"])
    if bd["preset"] == "rabi":
        return CycleBoundaries.rabi(model.params.get("b", 1.0), bd["l"])
    raise ConfigError(f"boundaries.preset must be 'linear' or 'rabi', got {bd['preset']!r}")


def _build_taylor(model: DiffusionModel, t: Any) -> tuple[TaylorBounds | None, tuple | None]:
    if t is None:
        return None, None
    if not isinstance(t, dict):
        raise ConfigError("[model.taylor] must be a table")
    unknown = set(t) - _TAYLOR_KEYS
    if unknown or not {"M", "delta0"} <= set(t):
        raise ConfigError("[model.taylor] needs M and delta0 (and optionally grid) only")
    p = model.params
    if model.family is Family.AsymLinear:
        a, b, sp = p["a"], p["b"], p["s"]
    elif model.family is Family.BBLinear:
        a, b, sp = 1.0, p["b"], 1.0
    else:
        raise ConfigError("Taylor bounds apply to the linear-noise families only")
    tb = TaylorBounds(a, b, sp, float(t["M"]), float(t["delta0"]))
    grid = t.get("grid")
    return tb, (tuple(float(g) for g in grid) if grid is not None else None)


def parse_config(doc: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed TOML document."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a table")
    if "schema_version" not in doc:
        raise ConfigError("missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r}; expected {SCHEMA_VERSION}")
    unknown = set(doc) - set(_DEFAULTS) - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    model_in = dict(doc.get("model", {})) if isinstance(doc.get("model", {}), dict) else doc["model"]
    taylor_in = model_in.pop("taylor", None) if isinstance(model_in, dict) else None
    tabs = {s: _merge(s, doc.get(s, {}) if s != "model" else model_in) for s in _DEFAULTS}
    tabs["model"]["taylor"] = taylor_in
    try:
        model = _build_model(tabs["model"])
        boundaries = _build_boundaries(tabs["boundaries"], model)
        taylor, tgrid = _build_taylor(model, taylor_in)
        sc, run, sim, out = tabs["scaling"], tabs["run"], tabs["sim"], tabs["output"]
        eps_grid = tuple(float(e) for e in sc["eps_grid"])
        if not eps_grid or eps_grid[-1] <= 0 or any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
            raise ConfigError("scaling.eps_grid must be positive and strictly decreasing")
        J = _positive("scaling.J", sc["J"])
        z_cal = _positive("scaling.z_cal", sc["z_cal"])
        if run["paths"] < 0 or run["workers"] < 1:
            raise ConfigError("run.paths must be nonnegative and run.workers positive")
        if run["horizon"] < 0 or run["eps"] < 0:
            raise ConfigError("run.horizon and run.eps must be nonnegative")
        _positive("run.horizon_factor", run["horizon_factor"])
        x0 = _positive("run.x_start", run["x_start"])
        z = _positive("run.z_target", run["z_target"])
        if not x0 <= z:
            raise ConfigError("run.x_start must not exceed run.z_target")
        triples = []
        for tr in run["triples"]:
            if not (isinstance(tr, list) and len(tr) == 3):
                raise ConfigError("run.triples entries must be [x, r, R]")
            x, r, R = (float(v) for v in tr)
            if not (0 < r <= x <= R < math.inf and r < R):
                raise ConfigError(f"run.triples entry {tr} violates 0 < r <= x <= R")
            triples.append((x, r, R))
        try:
            scheme = Scheme(sim["scheme"])
        except ValueError:
            raise ConfigError(f"sim.scheme must be EulerNative or EulerTransformed, got {sim['scheme']!r}")
        simcfg = SimConfig(scheme=scheme, dt_max=sim["dt_max"], dt_min=sim["dt_min"], c_drift=sim["c_drift"],
                           c_bar=sim["c_bar"], barrier_refine=sim["barrier_refine"], max_steps=sim["max_steps"],
                           h_table_size=sim["h_table_size"], rng_master_seed=run["seed"], workers=run["workers"])
        formats = tuple(out["formats"])
        if not formats or not set(formats) <= _FORMATS:
            raise ConfigError("output.formats must be a nonempty subset of ['csv', 'json']")
    except DomainError as e:
        raise ConfigError(str(e)) from e
    return ExperimentConfig(model=model, boundaries=boundaries, J=J, z_cal=z_cal, eps_grid=eps_grid,
                            paths=run["paths"], horizon=float(run["horizon"]),
                            horizon_factor=float(run["horizon_factor"]), x_start=x0, z_target=z,
                            eps=float(run["eps"]), seed=run["seed"], workers=run["workers"],
                            triples=tuple(triples), sim=simcfg, out_dir=Path(out["directory"]),
                            formats=formats, taylor=taylor, taylor_grid=tgrid,
                            raw=dict(schema_version=SCHEMA_VERSION, **tabs))


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read and parse a TOML configuration; ``None`` gives the defaults."""
    if path is None:
        return parse_config({"schema_version": SCHEMA_VERSION})
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(doc)
