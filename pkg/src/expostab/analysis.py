"""Datko-type estimators over sampled initial states and switching signals.

All suprema here are maxima over finite samples, so every verdict carries a
``"sampled"`` qualifier: a certificate would need interval arithmetic.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynsys import BlowUpError, Norm, SwitchingSignal, Trajectory, default_dt, evolve_batch

TAIL_FRACTION = 0.25
LAMBDA_TOL = 1e-6
_FLOOR = 1e-300


# --------------------------------------------------------------------------
# Sampling and sweeps
# --------------------------------------------------------------------------


def sphere_samples(model, radius: float, count: int, seed: int = 0, include_axes: bool = True) -> np.ndarray:
    """Seeded isotropic directions (plus coordinate axes) scaled to ``||x|| = radius``."""
    n = model.state_dim
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((count, n))
    if include_axes:
        X = np.vstack([np.eye(n), X])
    nrm = np.asarray(model.norm(X))
    return X * (radius / nrm)[:, None]


def _map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sweep(model, X0, ensemble, horizon, dt, reduce, threads=1, breakpoints=()):
    """Apply ``reduce(times, norms)`` to each signal's batch; ``norms`` is ``(N, B)``."""

    def one(sig):
        times, states = evolve_batch(model, X0, sig, horizon, dt, breakpoints)
        return reduce(times, np.asarray(model.norm(states)))

    return _map(one, list(ensemble), threads)


def _on_grid(grid, times, values):
    """Resample columns of ``values`` (``(N, B)``) onto ``grid``."""
    if len(times) == len(grid) and np.array_equal(times, grid):
        return values
    out = np.empty((len(grid), values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.interp(grid, times, values[:, j])
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, ``null`` for non-finite reals)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionTable:
    """Piecewise linear function of the radius, tabulated at increasing ``r``."""

    r: tuple
    values: tuple

    def __post_init__(self):
        r = tuple(float(x) for x in self.r)
        v = tuple(float(x) for x in self.values)
        if len(r) != len(v) or not r:
            raise ValueError("table needs matching nonempty r and values")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("table radii must be strictly increasing")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        return np.interp(x, self.r, self.values)

    @property
    def is_nondecreasing(self) -> bool:
        return all(b >= a for a, b in zip(self.values, self.values[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("r,value\n")
        for a, b in zip(self.r, self.values):
            buf.write(f"{a:.17g},{b:.17g}\n")
        return buf.getvalue()


def alpha_from_beta(beta: FunctionTable) -> FunctionTable:
    """``alpha(r) = 1 + max_{0 < s <= r} beta(s)/s`` with ``alpha(0) = 1 + beta(r_min)/r_min``.

    ``beta`` must be nondecreasing with ``beta(0) = 0``.  A finite limsup of
    ``beta(r)/r`` at the origin is checked on the two smallest positive
    radii: the ratio may not more than double between them.
    """
    if not beta.is_nondecreasing:
        raise ValueError("beta table must be nondecreasing")
    r = np.array(beta.r)
    b = np.array(beta.values)
    if r[0] < 0:
        raise ValueError("radii must be nonnegative")
    if r[0] == 0:
        if b[0] != 0:
            raise ValueError("beta(0) must vanish")
        r, b = r[1:], b[1:]
    if r.size == 0:
        raise ValueError("beta table needs a positive radius")
    ratio = b / r
    if ratio.size >= 2 and ratio[0] > 2 * ratio[1]:
        raise ValueError("beta(r)/r appears unbounded near 0")
    alpha = 1 + np.maximum.accumulate(ratio)
    return FunctionTable((0.0,) + tuple(r), (float(alpha[0]),) + tuple(alpha))


# --------------------------------------------------------------------------
# L^p integrals
# --------------------------------------------------------------------------


def lp_integral(traj: Trajectory, p: float, tail_horizon: float | None = None, norm: Norm | None = None) -> float:
    """Composite trapezoid value of ``int_0^T ||phi(t)||^p dt``, ``T = tail_horizon``."""
    if not p > 0:
        raise ValueError("p must be positive")
    T = traj.horizon if tail_horizon is None else float(tail_horizon)
    if traj.horizon < T * (1 - 1e-12):
        raise ValueError(f"trajectory covers [0, {traj.horizon:g}], shorter than tail_horizon {T:g}")
    norm = Norm() if norm is None else norm
    t = traj.times
    y = np.asarray(norm(traj.states)) ** p
    keep = t <= T
    tt, yy = t[keep], y[keep]
    if tt[-1] < T:
        tt = np.append(tt, T)
        yy = np.append(yy, np.interp(T, t, y))
    return float(np.trapezoid(yy, tt))


def lp_tail_bound(final_norm: float, p: float, lam: float | None) -> float:
    """``||phi(T)||^p/(p*lam)``; ``inf`` (unknown) without a positive decay rate."""
    if final_norm == 0:
        return 0.0
    if lam is None or not lam > LAMBDA_TOL:
        return math.inf
    return final_norm**p / (p * lam)


def _tail_rate(times, norms, fraction=TAIL_FRACTION):
    """Per-column decay rate of the forward-sup envelope over the final ``fraction``."""
    env = np.maximum.accumulate(norms[::-1], axis=0)[::-1]
    keep = times >= times[-1] * (1 - fraction)
    t = times[keep]
    y = np.log(np.maximum(env[keep], _FLOOR))
    slope = np.polyfit(t - t.mean(), y, 1)[0]
    return -np.atleast_1d(slope)


# --------------------------------------------------------------------------
# Datko check
# --------------------------------------------------------------------------


@dataclass
class DatkoReport:
    verdict: str
    p: float
    k_table: list  # [(r, k_hat)]
    truncation: list = field(default_factory=list)  # [(r, max tail share)]
    blowup_time: float | None = None

    @property
    def finite(self) -> bool:
        return self.blowup_time is None and all(math.isfinite(k) for _, k in self.k_table)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "p": self.p,
            "k_table": [[r, k] for r, k in self.k_table],
            "truncation": [[r, s] for r, s in self.truncation],
            "blowup_time": self.blowup_time,
            "sampled": True,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def k_csv(self) -> str:
        if not self.k_table:
            return "r,value\n"
        return FunctionTable(tuple(r for r, _ in self.k_table), tuple(k for _, k in self.k_table)).to_csv()


def datko_check(
    model,
    p: float,
    ensemble: Sequence[SwitchingSignal],
    radii: Sequence[float],
    samples_per_radius: int,
    horizon: float,
    dt: float | None = None,
    seed: int = 0,
    flat_tol: float = 0.10,
    threads: int = 1,
) -> DatkoReport:
    """Sampled Datko constant ``k(r) = max (int ||phi||^p)^(1/p) / ||x||`` per radius.

    Each trajectory's integral is the trapezoid value on ``[0, horizon]``
    plus the exponential tail bound from its own final decay rate; a
    trajectory whose envelope does not decay at the end contributes
    ``k = inf``.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be positive and increasing")
    ensemble = list(ensemble)

    def reduce_for(r):
        def reduce(times, norms):
            integral = np.trapezoid(norms**p, times, axis=0)
            lam = _tail_rate(times, norms)
            tails = np.array([lp_tail_bound(nT, p, l) for nT, l in zip(norms[-1], lam)])
            total = integral + tails
            k = np.max(total ** (1 / p)) / r
            finite = np.isfinite(tails)
            share = np.ones_like(tails)
            share[finite] = tails[finite] / np.maximum(total[finite], _FLOOR)
            share = share.max()
            return k, share

        return reduce

    k_table, trunc = [], []
    for r in radii:
        X0 = sphere_samples(model, r, samples_per_radius, seed)
        try:
            res = _sweep(model, X0, ensemble, horizon, dt, reduce_for(r), threads)
        except BlowUpError as exc:
            return DatkoReport("not forward-bounded on samples", p, k_table, trunc, exc.time)
        k_table.append((r, float(max(k for k, _ in res))))
        trunc.append((r, float(max(s for _, s in res))))

    ks = np.array([k for _, k in k_table])
    if np.all(np.isfinite(ks)) and ks.max() <= ks.min() * (1 + flat_tol):
        verdict = "UGES-consistent (sampled)"
    elif np.all(np.isfinite(ks)) and np.all(np.diff(ks) >= -flat_tol * ks[:-1]):
        verdict = "USGES-consistent (sampled)"
    else:
        verdict = "inconclusive"
    return DatkoReport(verdict, p, k_table, trunc)


# --------------------------------------------------------------------------
# Decay fitting
# --------------------------------------------------------------------------


@dataclass
class DecayEstimate:
    """Fitted ``||phi(t)|| <= M exp(-lam t) ||x||`` at one radius.

    ``M`` is the smallest constant valid on the whole sampled curve for the
    reported ``lam``; ``M_fit`` is the least-squares intercept past the
    transient and ``residual`` the largest log-excess of the curve over
    ``M_fit exp(-lam t) (1 + tol)`` there.
    """

    M: float
    lam: float
    radius: float
    residual: float
    M_fit: float
    tol: float = 0.05
    times: np.ndarray | None = field(default=None, repr=False)
    curve: np.ndarray | None = field(default=None, repr=False)

    @property
    def stable(self) -> bool:
        return self.lam > LAMBDA_TOL and self.residual <= self.tol

    @property
    def verdict(self) -> str:
        if self.stable:
            return f"exponentially stable at radius {self.radius:g} (sampled)"
        return "not exponentially stable (sampled)"

    def to_dict(self) -> dict:
        return {
            "M": self.M, "lambda": self.lam, "radius": self.radius, "residual": self.residual,
            "M_fit": self.M_fit, "verdict": self.verdict, "sampled": True,
        }

    def curve_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,value\n")
        for t, s in zip(self.times, self.curve):
            buf.write(f"{t:.17g},{s:.17g}\n")
        return buf.getvalue()


def fit_decay(times, s, radius: float, transient_fraction: float = 0.2, tol: float = 0.05, lam: float | None = None) -> DecayEstimate:
    """Least-squares fit of ``log s(t) = log M - lam t`` past the transient.

    With ``lam`` given, only the intercept is solved for.
    """
    times = np.asarray(times, dtype=float)
    s = np.asarray(s, dtype=float)
    if not 0 <= transient_fraction < 1:
        raise ValueError("transient_fraction must lie in [0, 1)")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("s(t) must be positive and finite; shorten the horizon or check the model")
    keep = times >= times[-1] * transient_fraction
    t, y = times[keep], np.log(s[keep])
    if lam is None:
        slope, icpt = np.polyfit(t, y, 1)
        lam = -float(slope)
    else:
        icpt = float(np.mean(y + lam * t))
    residual = max(0.0, float(np.max(y - (icpt - lam * t))) - math.log1p(tol))
    M = max(1.0, float(np.max(s * np.exp(lam * times))))
    return DecayEstimate(M, float(lam), float(radius), residual, float(math.exp(icpt)), tol, times, s)


def sup_ratio_curve(model, ensemble, radius, samples, horizon, dt=None, seed=0, threads=1, X0=None):
    """``(grid, s)`` with ``s(t) = max ||phi(t, x, sig)|| / ||x||`` over samples and signals."""
    dt = default_dt(horizon) if dt is None else dt
    n = int(math.floor(horizon / dt + 1e-9))
    grid = np.append(np.arange(n + 1) * dt, horizon) if horizon - n * dt > 1e-9 * dt else np.arange(n + 1) * dt
    grid[-1] = horizon
    X0 = sphere_samples(model, radius, samples, seed) if X0 is None else X0
    x_norm = np.asarray(model.norm(X0))

    def reduce(times, norms):
        return np.max(_on_grid(grid, times, norms) / x_norm, axis=1)

    curves = _sweep(model, X0, ensemble, horizon, dt, reduce, threads)
    return grid, np.max(np.vstack(curves), axis=0)


def decay_fit(
    model,
    ensemble: Sequence[SwitchingSignal],
    radius: float,
    samples: int,
    horizon: float,
    transient_fraction: float = 0.2,
    dt: float | None = None,
    seed: int = 0,
    tol: float = 0.05,
    threads: int = 1,
) -> DecayEstimate:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    grid, s = sup_ratio_curve(model, ensemble, radius, samples, horizon, dt, seed, threads)
    return fit_decay(grid, s, radius, transient_fraction, tol)


def decay_fit_radii(
    model,
    ensemble: Sequence[SwitchingSignal],
    radii: Sequence[float],
    samples: int,
    horizon: float,
    transient_fraction: float = 0.2,
    dt: float | None = None,
    seed: int = 0,
    tol: float = 0.05,
    threads: int = 1,
) -> list[DecayEstimate]:
    """Per-radius fits normalized to a common rate.

    The common ``lam`` is the smallest fitted rate; each ``M(r)`` is re-solved
    with it and then made nondecreasing in ``r`` (the bound on a ball holds
    on every smaller ball).
    """
    curves = [sup_ratio_curve(model, ensemble, r, samples, horizon, dt, seed, threads) for r in radii]
    raw = [fit_decay(g, s, r, transient_fraction, tol) for (g, s), r in zip(curves, radii)]
    lam = min(e.lam for e in raw)
    out = [fit_decay(g, s, r, transient_fraction, tol, lam=lam) for (g, s), r in zip(curves, radii)]
    M = 1.0
    for e in out:
        M = max(M, e.M)
        e.M = M
    return out


# --------------------------------------------------------------------------
# Growth bound on [0, t1]
# --------------------------------------------------------------------------


@dataclass
class GrowthBound:
    t1: float
    G0: float
    beta: FunctionTable
    alpha: FunctionTable
    coarse_M: float
    coarse_lambda: float

    def to_dict(self) -> dict:
        return {
            "t1": self.t1, "G0": self.G0,
            "beta": [[r, v] for r, v in zip(self.beta.r, self.beta.values)],
            "alpha": [[r, v] for r, v in zip(self.alpha.r, self.alpha.values)],
            "coarse_M": self.coarse_M, "coarse_lambda": self.coarse_lambda, "sampled": True,
        }


def growth_bound(
    model,
    t1: float,
    ensemble: Sequence[SwitchingSignal],
    radii: Sequence[float],
    samples: int,
    dt: float | None = None,
    seed: int = 0,
    threads: int = 1,
) -> GrowthBound:
    """Tabulate ``b(r) = max_{t <= t1} ||phi(t, x, sig)||`` over sampled ``||x|| = r``.

    ``beta`` is the nondecreasing envelope of ``b`` (so it covers the ball),
    ``G0 = 1``.  The coarse rate pair is ``M = G0``,
    ``lam = max(0, log(G0/t1))``.
    """
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    radii = sorted(float(r) for r in radii)
    b = []
    for r in radii:
        X0 = sphere_samples(model, r, samples, seed)
        vals = _sweep(model, X0, ensemble, t1, dt, lambda times, norms: float(norms.max()), threads)
        b.append(max(vals))
    beta = FunctionTable(tuple(radii), tuple(np.maximum.accumulate(b)))
    G0 = 1.0
    return GrowthBound(t1, G0, beta, alpha_from_beta(beta), G0, max(0.0, math.log(G0 / t1)))
