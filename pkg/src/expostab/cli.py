"""Command-line front end.

Every command reads a JSON config (``--config``) whose keys may be
overridden by flags, validates it completely, builds the model, and only
then writes into ``--out``: ``report.json``, CSV tables, ``t,value`` plot
curves and ``manifest.json``.  Exit codes: 0 analysis completed, 1 numerical
failure (blow-up), 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import io
import json
import logging
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import scipy

from . import __version__
from .analysis import datko_check, decay_fit, decay_fit_radii, dumps, fit_decay, sphere_samples
from .dynsys import BlowUpError, SwitchingSignal, default_dt, evolve, evolve_batch, signal_ensemble
from .iss import default_input_ensemble, lp_gain
from .lyapunov import LyapunovParams, dini_many, make_functional, verify_certificate
from .models import DelayModel, SemilinearModel, constant_history, model_from_dict
from .sampled import (
    SamplingSchedule,
    SystemConstants,
    c_star,
    compare_continuous_vs_sampled,
    decay_table_csv,
    delta_star,
    mismatch_check,
    sampled_ratio_curve,
    simulate_sampled_loop,
)

log = logging.getLogger("expostab")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


# --------------------------------------------------------------------------
# Schema
# --------------------------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 1}
_P_FINITE = {"type": "number", "minimum": 1}
_P_ANY = {"anyOf": [_P_FINITE, {"const": "inf"}]}
_FRACTION = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_RADII = {"type": "array", "items": _POS, "minItems": 1}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_DOC_OR_PATH = {"anyOf": [{"type": "string"}, {"type": "object"}]}
_SIGNAL = {
    "type": "object",
    "properties": {"switch_times": {"type": "array", "items": _NONNEG, "minItems": 1},
                   "modes": {"type": "array", "minItems": 1}},
    "required": ["switch_times", "modes"],
    "additionalProperties": False,
}

_COMMON = {"seed": {"type": "integer", "minimum": 0}, "threads": _COUNT, "dt": _POS}
_WITH_MODEL = {"model": _DOC_OR_PATH, "signals": _COUNT}

# name -> (properties, required, numerical-method defaults)
_SCHEMAS: dict[str, tuple[dict, list, dict]] = {
    "simulate": (
        {**_WITH_MODEL, "horizon": _POS, "x0": _VECTOR, "signal": _SIGNAL},
        ["model", "horizon", "x0"],
        {},
    ),
    "datko": (
        {**_WITH_MODEL, "horizon": _POS, "p": _P_FINITE, "radii": _RADII, "samples_per_radius": _COUNT,
         "flat_tol": _POS},
        ["model", "horizon", "p", "radii"],
        {"signals": 256, "samples_per_radius": 8, "flat_tol": 0.1},
    ),
    "decay": (
        {**_WITH_MODEL, "horizon": _POS, "radii": _RADII, "samples": _COUNT, "transient_fraction": _FRACTION,
         "tol": _POS},
        ["model", "horizon", "radii"],
        {"signals": 256, "samples": 8, "transient_fraction": 0.2, "tol": 0.05},
    ),
    "lyapunov": (
        {**_WITH_MODEL, "horizon": _POS, "radius": _POS, "functional": {"enum": ["coercive", "alt1", "alt2"]},
         "gamma": _POS, "M": {"type": "number", "minimum": 1}, "lam": _POS, "states": _COUNT,
         "decay_samples": _COUNT, "time_grid_points": {"type": "integer", "minimum": 2}},
        ["model", "horizon", "radius"],
        {"signals": 64, "functional": "coercive", "states": 32, "decay_samples": 8, "time_grid_points": 256},
    ),
    "certificate": (
        {**_WITH_MODEL, "horizon": _POS, "radius": _POS, "p": _POS,
         "functional": {"enum": ["coercive", "alt1", "alt2", "quadratic"]},
         "P": {"type": "array", "items": _VECTOR}, "c": _POS, "c_lower": _POS, "c_upper": _POS,
         "gamma": _POS, "samples": _COUNT, "decay_samples": _COUNT, "tol": _POS},
        ["model", "horizon", "radius", "p"],
        {"signals": 16, "functional": "coercive", "samples": 16, "decay_samples": 8, "tol": 0.02},
    ),
    "sampled delta-star": (
        {"constants": _DOC_OR_PATH, "margin": _FRACTION, "delta_max": _POS, "curve_points": _COUNT},
        ["constants"],
        {"margin": 1e-3, "delta_max": 10.0, "curve_points": 200},
    ),
    "sampled run": (
        {**_WITH_MODEL, "horizon": _POS, "delta": _POS, "radius": _POS, "samples": _COUNT,
         "schedule": {"enum": ["uniform", "jittered"]}, "constants": _DOC_OR_PATH, "tol": _POS},
        ["model", "horizon", "delta", "radius"],
        {"signals": 64, "samples": 4, "schedule": "uniform", "tol": 0.01},
    ),
    "sampled compare": (
        {**_WITH_MODEL, "horizon": _POS, "deltas": {"type": "array", "items": _NONNEG, "minItems": 1},
         "radius": _POS, "samples": _COUNT, "transient_fraction": _FRACTION},
        ["model", "horizon", "deltas", "radius"],
        {"signals": 64, "samples": 4, "transient_fraction": 0.2},
    ),
    "iss gain": (
        {**_WITH_MODEL, "horizon": _POS, "p": _P_ANY, "inputs": _COUNT, "L_V": _POS, "c_lower": _POS,
         "c_upper": _POS, "check_hypothesis": {"type": "boolean"}},
        ["model", "horizon", "p"],
        {"signals": 16, "inputs": 64, "check_hypothesis": False},
    ),
}

COMMANDS = sorted(_SCHEMAS)


def _schema(command: str) -> dict:
    props, required, _ = _SCHEMAS[command]
    return {"type": "object", "properties": {**_COMMON, **props}, "required": required,
            "additionalProperties": False}


def _error_text(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"unknown key(s) {', '.join(map(repr, extra))} at {path}"
    if err.validator == "required":
        return f"{err.message} at {path}"
    return f"{path}: {err.message}"


@dataclass
class RunConfig:
    """Validated parameters of one command plus the resolved model/constants documents."""

    command: str
    params: dict
    base_dir: Path = field(default_factory=Path.cwd)
    model_doc: dict | None = None
    constants_doc: dict | None = None

    @property
    def seed(self) -> int:
        return self.params["seed"]

    def effective(self) -> dict:
        out = {k: v for k, v in self.params.items() if k not in ("model", "constants")}
        if self.model_doc is not None:
            out["model"] = self.model_doc
        if self.constants_doc is not None:
            out["constants"] = self.constants_doc
        return out


def _load_doc(value, base_dir: Path, key: str) -> dict:
    if isinstance(value, dict):
        return copy.deepcopy(value)
    path = (base_dir / value) if not os.path.isabs(value) else Path(value)
    if not path.exists() or path.is_dir():
        raise ConfigError(f"{key}: file not found: {value}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{key}: {path} is not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{key}: {path} must hold a JSON object")
    return doc


def parse_config(text: str | dict, command: str, base_dir: str | Path | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Validate a config document for ``command``; fills numerical defaults only."""
    if command not in _SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    if isinstance(text, str):
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON ({exc.msg} at line {exc.lineno})") from None
    else:
        doc = copy.deepcopy(text)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    errors = sorted(jsonschema.Draft202012Validator(_schema(command)).iter_errors(doc),
                    key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if errors:
        raise ConfigError("; ".join(_error_text(e) for e in errors))

    _, _, defaults = _SCHEMAS[command]
    params = {"seed": 0, "threads": 1, **defaults, **doc}
    if "horizon" in params:
        params.setdefault("dt", default_dt(params["horizon"]))
        if params["dt"] > params["horizon"]:
            raise ConfigError("dt: must not exceed horizon")
    for key in ("radii", "deltas"):
        vals = params.get(key)
        if vals is not None and any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError(f"{key}: must be strictly increasing")
    if "signal" in params:
        sig = params["signal"]
        if len(sig["switch_times"]) != len(sig["modes"]):
            raise ConfigError("signal: switch_times and modes must have equal length")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    cfg = RunConfig(command, params, base)
    if "model" in params:
        cfg.model_doc = _load_doc(params["model"], base, "model")
    if "constants" in params:
        cfg.constants_doc = _load_doc(params["constants"], base, "constants")
    return cfg


# --------------------------------------------------------------------------
# Building blocks
# --------------------------------------------------------------------------


def _build_model(cfg: RunConfig):
    try:
        return model_from_dict(cfg.model_doc)
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
        raise ConfigError(f"model: {msg}") from None


def _dynamics(model):
    """Autonomous evolution model behind ``model`` (closed loop for semilinear systems)."""
    if isinstance(model, SemilinearModel):
        return model.closed_loop if model.feedback is not None else model.unforced
    return model


def _require_semilinear(model, command):
    if not isinstance(model, SemilinearModel):
        raise ConfigError(f"model: '{command}' needs a semilinear model (kind 'semilinear')")
    return model


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    return "inf" if v == math.inf else "-inf" if v == -math.inf else format(v, ".17g")


def _curve(ts, vals) -> str:
    return _csv(["t", "value"], zip(ts, vals))


def _ensemble(cfg: RunConfig, model):
    p = cfg.params
    return signal_ensemble(list(model.modes), p["horizon"], count=p["signals"], seed=p["seed"])


def _initial_state(model, x0):
    x0 = np.asarray(x0, dtype=float)
    if isinstance(model, DelayModel) and x0.size == model.n:
        return constant_history(model, x0)
    if x0.size != model.state_dim:
        raise ConfigError(f"x0: has length {x0.size}, model state dimension is {model.state_dim}")
    return x0


@dataclass
class Outcome:
    exit_code: int
    report: dict
    files: dict[str, str] = field(default_factory=dict)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _prepare(cfg: RunConfig):
    """Everything that can fail on bad input, done before any output exists."""
    c, p = cfg.command, cfg.params
    prep: dict[str, Any] = {}
    if cfg.model_doc is not None:
        prep["model"] = _build_model(cfg)
    if c in ("sampled run", "sampled compare", "iss gain"):
        _require_semilinear(prep["model"], c)
        if c != "iss gain" and prep["model"].feedback is None:
            raise ConfigError("model: sampled-data commands need a feedback law 'K'")
    if c == "simulate":
        model = _dynamics(prep["model"])
        prep["x0"] = _initial_state(model, p["x0"])
        if "signal" in p:
            try:
                sig = SwitchingSignal.from_dict(p["signal"])
            except ValueError as exc:
                raise ConfigError(f"signal: {exc}") from None
            bad = set(sig.modes) - set(model.modes)
            if bad:
                raise ConfigError(f"signal: unknown mode(s) {sorted(map(str, bad))}")
        else:
            sig = SwitchingSignal.constant(model.modes[0])
        prep["signal"] = sig
    if c == "certificate" and p["functional"] == "quadratic":
        if "c" not in p and "c_upper" not in p:
            raise ConfigError("c: a quadratic certificate needs an upper constant 'c' or 'c_upper'")
        n = prep["model"].state_dim
        if "P" in p and np.asarray(p["P"]).shape != (n, n):
            raise ConfigError(f"P: must be a {n}x{n} matrix")
    if c in ("sampled delta-star",) or (c == "sampled run" and cfg.constants_doc is not None):
        try:
            prep["constants"] = SystemConstants.from_dict(cfg.constants_doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"constants: {exc}") from None
    if c == "sampled run" and p["delta"] > p["horizon"]:
        raise ConfigError("delta: must not exceed horizon")
    if c == "iss gain":
        given = [k for k in ("L_V", "c_lower", "c_upper") if k in p]
        if given and len(given) != 3:
            raise ConfigError("L_V, c_lower, c_upper: supply all three or none")
        if given and p["c_lower"] > p["c_upper"]:
            raise ConfigError("c_lower: must not exceed c_upper")
    return prep


def _cmd_simulate(cfg, prep) -> Outcome:
    p = cfg.params
    model = _dynamics(prep["model"])
    try:
        traj = evolve(model, prep["x0"], prep["signal"], p["horizon"], p["dt"])
    except BlowUpError as exc:
        return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
    norms = np.asarray(model.norm(traj.states))
    n = traj.states.shape[1]
    files = {
        "trajectory.csv": _csv(["t"] + [f"x_{i}" for i in range(n)],
                               (np.concatenate([[t], x]) for t, x in zip(traj.times, traj.states))),
        "norm.csv": _curve(traj.times, norms),
    }
    report = {"signal": prep["signal"].to_dict(), "final_norm": float(norms[-1]), "max_norm": float(norms.max()),
              "initial_norm": float(norms[0]), "steps": len(traj.times) - 1}
    return Outcome(0, report, files)


def _cmd_datko(cfg, prep) -> Outcome:
    p = cfg.params
    model = _dynamics(prep["model"])
    rep = datko_check(model, p["p"], _ensemble(cfg, model), p["radii"], p["samples_per_radius"], p["horizon"],
                      p["dt"], p["seed"], p["flat_tol"], p["threads"])
    files = {"k_table.csv": rep.k_csv()}
    code = 0
    report = rep.to_dict()
    if rep.blowup_time is not None:
        code = 1
        report["error"] = "blow-up"
    return Outcome(code, report, files)


def _cmd_decay(cfg, prep) -> Outcome:
    p = cfg.params
    model = _dynamics(prep["model"])
    try:
        ests = decay_fit_radii(model, _ensemble(cfg, model), p["radii"], p["samples"], p["horizon"],
                               p["transient_fraction"], p["dt"], p["seed"], p["tol"], p["threads"])
    except BlowUpError as exc:
        return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
    files = {f"curve_r{i}.csv": e.curve_csv() for i, e in enumerate(ests)}
    files["M_table.csv"] = _csv(["r", "value"], ((e.radius, e.M) for e in ests))
    report = {"lambda": ests[0].lam, "fits": [e.to_dict() for e in ests],
              "verdict": "exponentially decaying" if all(e.stable for e in ests) else "not decaying on samples"}
    return Outcome(0, report, files)


def _lyapunov_params(cfg, model, ens):
    p = cfg.params
    if "M" in p and "lam" in p:
        return LyapunovParams.from_decay(p["M"], p["lam"], p["radius"], p.get("gamma")), None
    est = decay_fit(model, ens, p["radius"], p["decay_samples"], p["horizon"], dt=p["dt"], seed=p["seed"],
                    threads=p["threads"])
    if not est.stable:
        return None, est
    return LyapunovParams.from_decay(est.M, est.lam, p["radius"], p.get("gamma")), est


def _cmd_lyapunov(cfg, prep) -> Outcome:
    p = cfg.params
    model = _dynamics(prep["model"])
    ens = _ensemble(cfg, model)
    try:
        params, est = _lyapunov_params(cfg, model, ens)
    except BlowUpError as exc:
        return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
    report: dict[str, Any] = {"functional": p["functional"], "decay_fit": None if est is None else est.to_dict()}
    if params is None:
        report["verdict"] = "no functional: decay fit is not exponentially stable"
        return Outcome(0, report)
    report["params"] = params.to_dict()
    V = make_functional(p["functional"], model, params, ens, p["horizon"], p["dt"], p["time_grid_points"])
    rng = np.random.default_rng(p["seed"])
    X = sphere_samples(model, p["radius"], p["states"], p["seed"], include_axes=False)
    X *= rng.uniform(0.1, 1.0, len(X))[:, None]
    nx = np.asarray(model.norm(X))
    vals = np.asarray(V(X), dtype=float)
    sigs = [ens[i] for i in rng.integers(len(ens), size=len(X))]
    dres = dini_many(model, V, X, sigs, dt=p["dt"])
    ratios = vals / nx
    report.update(
        V_over_norm_min=float(ratios.min()), V_over_norm_max=float(ratios.max()),
        dini_over_norm_max=float(max(r.upper / n for r, n in zip(dres, nx))),
        dini_converged=int(sum(r.converged for r in dres)), states=len(X),
    )
    if p["functional"] == "coercive":
        report["sandwich_ok"] = bool(np.all(ratios >= params.c_lower * (1 - 1e-9))
                                     and np.all(ratios <= params.c_upper * 1.02))
    files = {"values.csv": _csv(["norm_x", "V", "dini_upper", "dini_extrapolated"],
                                ((n, v, r.upper, r.extrapolated) for n, v, r in zip(nx, vals, dres)))}
    # V along one trajectory, for plotting the decrease
    ts, traj = evolve_batch(model, X[:1], ens[0], p["horizon"], p["dt"])
    idx = np.unique(np.linspace(0, len(ts) - 1, 65).astype(int))
    files["V_along_trajectory.csv"] = _curve(ts[idx], V(traj[idx, 0, :]))
    return Outcome(0, report, files)


def _cmd_certificate(cfg, prep) -> Outcome:
    p = cfg.params
    model = _dynamics(prep["model"])
    ens = _ensemble(cfg, model)
    name = p["functional"]
    c_lower, c_upper, params = p.get("c_lower"), p.get("c_upper"), None
    if name == "quadratic":
        V = make_functional("quadratic", model, P=p.get("P"))
    else:
        try:
            params, est = _lyapunov_params(cfg, model, ens)
        except BlowUpError as exc:
            return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
        if params is None:
            return Outcome(0, {"verdict": False, "reason": "decay fit is not exponentially stable",
                               "decay_fit": est.to_dict()})
        V = make_functional(name, model, params, ens, p["horizon"], p["dt"])
        if name == "coercive":
            c_lower = params.c_lower if c_lower is None else c_lower
            c_upper = params.c_upper if c_upper is None else c_upper
        elif c_upper is None and "c" not in p:
            c_upper = params.M * (1 + 1 / params.lam)
    rep = verify_certificate(model, V, p["p"], p["radius"], p["samples"], ens, c=p.get("c"), c_lower=c_lower,
                             c_upper=c_upper, tol=p["tol"], seed=p["seed"], dt=p["dt"])
    report = rep.to_dict()
    report["functional"] = name
    if params is not None:
        report["params"] = params.to_dict()
    return Outcome(0, report)


def _cmd_delta_star(cfg, prep) -> Outcome:
    p = cfg.params
    k = prep["constants"]
    ds = delta_star(k, p["margin"], p["delta_max"])
    top = ds.value * 1.5 if math.isfinite(ds.value) and ds.value > 0 else p["delta_max"]
    grid = np.linspace(0, top, p["curve_points"] + 1)[1:]
    files = {"c_star.csv": _csv(["delta", "value"], ((d, c_star(k, d)) for d in grid))}
    report = {**ds.to_dict(), "constants": k.to_dict(), "margin": p["margin"]}
    return Outcome(0, report, files)


def _cmd_sampled_run(cfg, prep) -> Outcome:
    p = cfg.params
    model: SemilinearModel = prep["model"]
    ens = _ensemble(cfg, model)
    H, d = p["horizon"], p["delta"]
    sched = (SamplingSchedule.uniform(d, H) if p["schedule"] == "uniform"
             else SamplingSchedule.jittered(d, H, seed=p["seed"]))
    k = prep.get("constants") or SystemConstants(model.Gamma, model.omega, model.L_f, model.L_K, 1.0)
    X0 = sphere_samples(model.closed_loop, p["radius"], p["samples"], p["seed"], include_axes=False)
    worst, first = None, None
    try:
        for sig in ens:
            run = simulate_sampled_loop(model, sched, sig, X0, H, p["dt"])
            first = run if first is None else first
            rep = mismatch_check(run, k, sched, tol=p["tol"])
            if worst is None or rep.max_ratio > worst.max_ratio or (rep.violations and worst.ok):
                worst = rep
        grid, s = sampled_ratio_curve(model, sched, ens, X0, H, p["dt"])
    except BlowUpError as exc:
        return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
    est = fit_decay(grid, s, p["radius"])
    report = {"delta": sched.delta, "schedule": p["schedule"], "mismatch": worst.to_dict(),
              "gronwall_violations": len([v for v in worst.violations if "t" in v]),
              "decay_fit": est.to_dict(), "constants": k.to_dict(),
              "L_r_used": "L_r does not enter the mismatch bound" if "constants" not in prep else "supplied"}
    files = {"trajectory.csv": first.trajectory_csv(0), "sup_ratio.csv": _curve(grid, s)}
    return Outcome(0, report, files)


def _cmd_sampled_compare(cfg, prep) -> Outcome:
    p = cfg.params
    model = prep["model"]
    try:
        rows = compare_continuous_vs_sampled(model, _ensemble(cfg, model), p["deltas"], p["horizon"], p["radius"],
                                             p["samples"], p["dt"], p["seed"], p["transient_fraction"])
    except BlowUpError as exc:
        return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
    return Outcome(0, {"rows": rows}, {"decay_table.csv": decay_table_csv(rows)})


def _cmd_iss_gain(cfg, prep) -> Outcome:
    p = cfg.params
    model = prep["model"]
    ens = signal_ensemble(list(model.modes), p["horizon"], count=p["signals"], seed=p["seed"])
    inputs = default_input_ensemble(model.input_dim, p["horizon"], p["inputs"], p["seed"])
    pp = math.inf if p["p"] == "inf" else p["p"]
    try:
        rep = lp_gain(model, pp, inputs, ens, p["horizon"], p["dt"], p.get("L_V"), p.get("c_lower"),
                      p.get("c_upper"), p["check_hypothesis"], p["seed"])
    except BlowUpError as exc:
        return Outcome(1, {"error": "blow-up", "time": exc.time, "detail": str(exc)})
    return Outcome(0, rep.to_dict())


_DISPATCH = {
    "simulate": _cmd_simulate,
    "datko": _cmd_datko,
    "decay": _cmd_decay,
    "lyapunov": _cmd_lyapunov,
    "certificate": _cmd_certificate,
    "sampled delta-star": _cmd_delta_star,
    "sampled run": _cmd_sampled_run,
    "sampled compare": _cmd_sampled_compare,
    "iss gain": _cmd_iss_gain,
}


def run(cfg: RunConfig, out_dir: str | Path) -> int:
    """Validate the remaining preconditions, compute, and write artifacts; returns the exit code."""
    prep = _prepare(cfg)
    log.info("running %s", cfg.command)
    outcome = _DISPATCH[cfg.command](cfg, prep)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"report.json": dumps(outcome.report) + "\n", **outcome.files}
    manifest = {
        "command": cfg.command,
        "seed": cfg.seed,
        "parameters": cfg.effective(),
        "exit_code": outcome.exit_code,
        "outputs": sorted(files),
        "versions": {"expostab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    files["manifest.json"] = dumps(manifest) + "\n"
    for name, text in files.items():
        (out / name).write_text(text)
    if outcome.exit_code:
        log.error("%s failed: %s", cfg.command, outcome.report.get("detail", outcome.report.get("error")))
    return outcome.exit_code


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _p_value(s: str):
    return "inf" if s.strip().lower() in ("inf", "infinity") else float(s)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--model", help="model JSON file (overrides the config's 'model')")
    common.add_argument("--signals", type=int, help="switching-signal ensemble size")

    ap = argparse.ArgumentParser(prog="expostab", description="Exponential stability analysis of switched systems.")
    ap.add_argument("--version", action="version", version=f"expostab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "datko", "decay", "lyapunov", "certificate"):
        sp = sub.add_parser(name, parents=[common])
        if name in ("datko", "certificate"):
            sp.add_argument("--p", type=float)
    sampled = sub.add_parser("sampled").add_subparsers(dest="action", required=True)
    sp = sampled.add_parser("delta-star", parents=[common])
    sp.add_argument("--constants", help="constants JSON file")
    sp = sampled.add_parser("run", parents=[common])
    sp.add_argument("--delta", type=float)
    sp.add_argument("--constants", help="constants JSON file")
    sampled.add_parser("compare", parents=[common])
    iss = sub.add_parser("iss").add_subparsers(dest="action", required=True)
    sp = iss.add_parser("gain", parents=[common])
    sp.add_argument("--p", type=_p_value)
    sp.add_argument("--inputs", type=int)
    return ap


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("EXPOSTAB_LOG", "error").lower()
    logging.basicConfig(level={"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    command = args.command + (f" {args.action}" if getattr(args, "action", None) else "")
    overrides = {k: getattr(args, k, None) for k in ("seed", "threads", "signals", "p", "delta", "inputs")}
    cwd = Path.cwd()
    for key in ("model", "constants"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = os.path.abspath(val)
    try:
        text, base = "", cwd
        if args.config:
            cpath = Path(args.config)
            if not cpath.is_file():
                raise ConfigError(f"config file not found: {args.config}")
            text, base = cpath.read_text(), cpath.resolve().parent
        cfg = parse_config(text, command, base, overrides)
        return run(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
