"""Lyapunov functionals built from trajectories, Dini quotients and certificate checks.

The coercive functional is

    V(x) = (1/gamma) * max_{sigma, 0 <= t <= t_bar} exp(gamma t) ||phi(t, x, sigma)||

with ``t_bar = log(M)/(lam - gamma)`` for fitted decay constants ``(M, lam)``.
Suprema over signals run over a finite ensemble, so ``V`` under-approximates
the functional over all switching signals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .analysis import _on_grid, _tail_rate, dumps, lp_tail_bound, sphere_samples, FunctionTable
from .dynsys import SwitchingSignal, default_dt, evolve_batch, flow

Functional = Callable[[np.ndarray], np.ndarray]

DEFAULT_GRID_POINTS = 256
DEFAULT_H_SWEEP = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class LyapunovParams:
    gamma: float
    M: float
    lam: float
    radius: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.M >= 1:
            raise ValueError("M must be >= 1")
        if not self.lam > self.gamma:
            raise ValueError("need gamma < lambda for a finite t_bar")
        if not math.isfinite(self.t_bar):
            raise ValueError("t_bar is not finite")

    @classmethod
    def from_decay(cls, M: float, lam: float, radius: float = 1.0, gamma: float | None = None) -> "LyapunovParams":
        """Default ``gamma = lam/2``."""
        return cls(lam / 2 if gamma is None else gamma, M, lam, radius)

    @property
    def t_bar(self) -> float:
        return math.log(self.M) / (self.lam - self.gamma)

    @property
    def c_lower(self) -> float:
        return 1.0 / self.gamma

    @property
    def c_upper(self) -> float:
        return self.M / self.gamma

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "M": self.M, "lambda": self.lam, "radius": self.radius,
                "t_bar": self.t_bar, "c_lower": self.c_lower, "c_upper": self.c_upper}


def _batch(x, model) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return x.reshape(-1, model.state_dim), single


def eval_coercive(
    model,
    x,
    params: LyapunovParams,
    ensemble: Sequence[SwitchingSignal],
    time_grid_points: int = DEFAULT_GRID_POINTS,
    dt: float | None = None,
):
    """Coercive functional at one state or a batch ``(B, n)``.

    Time grid: ``time_grid_points`` uniform points on ``[0, t_bar]`` plus each
    signal's switch times in that window.
    """
    X, single = _batch(x, model)
    nx = np.asarray(model.norm(X))
    best = nx.copy()  # t = 0 term
    tb = params.t_bar
    if tb > 0:
        step = tb / (time_grid_points - 1) if dt is None else dt
        for sig in ensemble:
            times, states = evolve_batch(model, X, sig, tb, step)
            w = np.exp(params.gamma * times)[:, None]
            best = np.maximum(best, np.max(w * np.asarray(model.norm(states)), axis=0))
    V = best / params.gamma
    return float(V[0]) if single else V


def eval_alternative(
    model,
    x,
    variant: str,
    ensemble: Sequence[SwitchingSignal],
    horizon: float,
    dt: float | None = None,
    lam: float | None = None,
):
    """Integral-type functionals (coercive with lower constant 1).

    ``"integral_plus_sup"``: ``max_sigma int ||phi|| + sup ||phi||``;
    ``"sup_integrand_plus_sup"``: ``int max_sigma ||phi|| + sup ||phi||``.
    Both use one uniform grid and one tail rate (given, or the slowest rate
    of the pointwise-max curve) so the second always dominates the first.
    Raises ``ArithmeticError`` when the tail does not decay.
    """
    if variant in ("alt1", "1"):
        variant = "integral_plus_sup"
    if variant in ("alt2", "2"):
        variant = "sup_integrand_plus_sup"
    if variant not in ("integral_plus_sup", "sup_integrand_plus_sup"):
        raise ValueError(f"unknown variant {variant!r}")
    X, single = _batch(x, model)
    dt = default_dt(horizon) if dt is None else dt
    n = int(math.floor(horizon / dt + 1e-9))
    grid = np.arange(n + 1) * dt
    if horizon - grid[-1] > 1e-9 * dt:
        grid = np.append(grid, horizon)
    grid[-1] = horizon
    curves = []
    for sig in ensemble:
        times, states = evolve_batch(model, X, sig, horizon, dt)
        curves.append(_on_grid(grid, times, np.asarray(model.norm(states))))
    C = np.stack(curves)  # (S, N, B)
    top = C.max(axis=0)
    sup = top.max(axis=0)
    if lam is None:
        rates = _tail_rate(grid, top)
        lam = float(np.min(rates[np.asarray(top[-1]) > 0])) if np.any(top[-1] > 0) else math.inf
    tail = lambda v: np.array([lp_tail_bound(a, 1.0, lam) for a in np.ravel(v)]).reshape(np.shape(v))
    if variant == "integral_plus_sup":
        per_sig = np.trapezoid(C, grid, axis=1) + tail(C[:, -1, :])
        val = per_sig.max(axis=0) + sup
    else:
        val = np.trapezoid(top, grid, axis=0) + tail(top[-1]) + sup
    if not np.all(np.isfinite(val)):
        raise ArithmeticError("integral does not converge on the horizon (no decaying tail)")
    return float(val[0]) if single else val


# --------------------------------------------------------------------------
# Dini quotients
# --------------------------------------------------------------------------


@dataclass
class DiniResult:
    h: tuple
    quotients: tuple
    estimate: float  # quotient at the smallest h
    extrapolated: float
    upper: float
    lower: float
    converged: bool

    def to_dict(self) -> dict:
        return {"h": list(self.h), "quotients": list(self.quotients), "estimate": self.estimate,
                "extrapolated": self.extrapolated, "upper": self.upper, "lower": self.lower,
                "converged": self.converged}


def _dini_from(h, q, rtol=0.1) -> DiniResult:
    order = np.argsort(h)[::-1]
    h = tuple(float(h[i]) for i in order)
    q = tuple(float(q[i]) for i in order)
    h1, h0 = h[-1], h[-2]
    q1, q0 = q[-1], q[-2]
    extra = q1 + (q1 - q0) * h1 / (h0 - h1)
    converged = abs(q1 - q0) <= rtol * max(abs(q1), abs(q0), 1e-12)
    return DiniResult(h, q, q1, extra, max(q), min(q), converged)


def dini_many(model, V: Functional, X, sigmas: Sequence[SwitchingSignal], h_sweep=DEFAULT_H_SWEEP, dt=None) -> list[DiniResult]:
    """Forward quotients ``(V(phi(h, x, sigma)) - V(x))/h`` for paired states and signals.

    ``V`` is evaluated once on the stacked batch of all base and moved states.
    """
    h_sweep = tuple(float(h) for h in h_sweep)
    if len(h_sweep) < 3 or any(h <= 0 for h in h_sweep):
        raise ValueError("h_sweep needs at least three positive step sizes")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(sigmas) != len(X):
        raise ValueError("need one signal per state")
    moved = []
    for h in h_sweep:
        step = h if dt is None else min(dt, h)
        moved.append(np.stack([flow(model, x, s, h, step) for x, s in zip(X, sigmas)]))
    vals = np.asarray(V(np.vstack([X] + moved)), dtype=float).reshape(len(h_sweep) + 1, len(X))
    out = []
    for i in range(len(X)):
        q = [(vals[k + 1, i] - vals[0, i]) / h for k, h in enumerate(h_sweep)]
        out.append(_dini_from(np.array(h_sweep), np.array(q)))
    return out


def dini(model, V: Functional, x, sigma: SwitchingSignal, h_sweep=DEFAULT_H_SWEEP, dt=None) -> DiniResult:
    return dini_many(model, V, np.asarray(x, dtype=float)[None, :], [sigma], h_sweep, dt)[0]


# --------------------------------------------------------------------------
# Functional registry
# --------------------------------------------------------------------------

_CUSTOM: dict[str, Callable] = {}


def register_functional(plugin_id: str, factory: Callable) -> None:
    """Register ``factory(model, **options) -> V`` under ``custom:<plugin_id>``.

    Functionals must be pure maps from a batch ``(B, n)`` to ``(B,)``.
    """
    _CUSTOM[plugin_id] = factory


def make_functional(
    name: str,
    model,
    params: LyapunovParams | None = None,
    ensemble: Sequence[SwitchingSignal] = (),
    horizon: float | None = None,
    dt: float | None = None,
    time_grid_points: int = DEFAULT_GRID_POINTS,
    P=None,
    **options,
) -> Functional:
    """Functional handle by name: ``coercive``, ``alt1``, ``alt2``, ``quadratic:P``, ``custom:<id>``."""
    ensemble = list(ensemble)
    if name == "coercive":
        if params is None:
            raise ValueError("coercive functional needs LyapunovParams")
        return lambda X: eval_coercive(model, X, params, ensemble, time_grid_points, dt)
    if name in ("alt1", "alt2"):
        if horizon is None:
            raise ValueError("alternative functionals need a horizon")
        lam = None if params is None else params.lam
        return lambda X: eval_alternative(model, X, name, ensemble, horizon, dt, lam)
    if name.startswith("quadratic"):
        Pm = np.asarray(P if P is not None else np.eye(model.state_dim), dtype=float)
        return lambda X: np.einsum("...i,ij,...j->...", np.asarray(X), Pm, np.asarray(X))
    if name.startswith("custom:"):
        key = name.split(":", 1)[1]
        if key not in _CUSTOM:
            raise ValueError(f"no functional registered as {name!r}")
        return _CUSTOM[key](model, **options)
    raise ValueError(f"unknown functional {name!r}")


# --------------------------------------------------------------------------
# Certificates
# --------------------------------------------------------------------------


@dataclass
class CertificateReport:
    kind: str
    p: float
    c: float | None
    c_lower: float | None
    c_upper: float | None
    max_bound_violation: float
    max_dini_violation: float
    samples_checked: int
    verdict: bool
    witnesses: list = field(default_factory=list)
    notes: tuple = ("left-continuity of t -> V(phi(t, x, sigma)) is assumed, not checked",)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "p": self.p, "c": self.c, "c_lower": self.c_lower, "c_upper": self.c_upper,
            "max_bound_violation": self.max_bound_violation, "max_dini_violation": self.max_dini_violation,
            "samples_checked": self.samples_checked, "verdict": self.verdict,
            "witnesses": self.witnesses, "notes": list(self.notes), "sampled": True,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def verify_certificate(
    model,
    V: Functional,
    p: float,
    radius: float,
    samples: int,
    ensemble: Sequence[SwitchingSignal],
    c: float | None = None,
    c_lower: float | None = None,
    c_upper: float | None = None,
    h_sweep=DEFAULT_H_SWEEP,
    tol: float = 0.02,
    seed: int = 0,
    dt: float | None = None,
    max_witnesses: int = 5,
) -> CertificateReport:
    """Check ``V <= c ||x||^p`` (and ``c_lower ||x||^p <= V``) plus the Dini inequality.

    States are drawn in the ball of ``radius``; each state is paired with
    every signal of ``ensemble`` for the Dini check, which uses the largest
    quotient over the sweep.  Violations are relative to ``||x||^p``.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    coercive = c_lower is not None
    c_up = c_upper if c_upper is not None else c
    if c_up is None or not c_up > 0:
        raise ValueError("need a positive upper constant c")
    rng = np.random.default_rng(seed)
    X = sphere_samples(model, radius, samples, seed, include_axes=False)
    X *= rng.uniform(0.1, 1.0, len(X))[:, None]
    nx = np.asarray(model.norm(X)) ** p
    vals = np.asarray(V(X), dtype=float)
    bound_viol = vals / (c_up * nx) - (1 + tol)
    if coercive:
        bound_viol = np.maximum(bound_viol, (1 - tol) - vals / (c_lower * nx))
    witnesses = []
    for i in np.argsort(bound_viol)[::-1][:max_witnesses]:
        if bound_viol[i] > 0:
            witnesses.append({"check": "bound", "x": X[i].tolist(), "V": float(vals[i]), "violation": float(bound_viol[i])})

    ensemble = list(ensemble)
    Xs = np.repeat(X, len(ensemble), axis=0)
    sigs = ensemble * len(X)
    res = dini_many(model, V, Xs, sigs, h_sweep, dt)
    nxs = np.repeat(nx, len(ensemble))
    dini_viol = np.array([r.upper for r in res]) / nxs + (1 - tol)
    for i in np.argsort(dini_viol)[::-1][:max_witnesses]:
        if dini_viol[i] > 0:
            witnesses.append({"check": "dini", "x": Xs[i].tolist(), "signal": sigs[i].to_dict(),
                              "quotient": res[i].upper, "violation": float(dini_viol[i])})
    mb, md = float(bound_viol.max()), float(dini_viol.max()) if len(dini_viol) else -math.inf
    return CertificateReport(
        "coercive" if coercive else "noncoercive", p, c_up, c_lower, c_up if coercive else None,
        mb, md, len(X), bool(mb <= 0 and md <= 0), witnesses,
    )


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------


def family_condition(beta: FunctionTable, G0: float, t1: float, R: Sequence[float], c: Sequence[float], p: Sequence[float]) -> dict:
    """Terms ``beta^{-1}(R/G0) * min(1, (t1/c_R)^(1/p_R))`` over a user table of ``(R, c_R, p_R)``.

    A growing tail suggests (never proves) the semi-global condition; ``R/G0``
    beyond the table range of ``beta`` gives ``nan``.
    """
    b = np.array(beta.values)
    r = np.array(beta.r)
    terms = []
    for Rk, ck, pk in zip(R, c, p):
        y = Rk / G0
        inv = float(np.interp(y, b, r)) if b[0] <= y <= b[-1] else math.nan
        terms.append(inv * min(1.0, (t1 / ck) ** (1 / pk)))
    t = np.array(terms)
    finite = t[np.isfinite(t)]
    growing = bool(finite.size >= 2 and np.all(np.diff(finite) > 0) and finite[-1] > 2 * finite[0])
    return {"R": list(map(float, R)), "terms": terms, "growing": growing, "diagnostic_only": True}
