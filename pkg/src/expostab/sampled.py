"""Predictor-based sampled-data feedback for semilinear switched systems.

On each sampling interval ``[s_k, s_{k+1})`` the input is
``u(t) = K(expm(A (t - s_k)) x(s_k))``.  The loop is simulated on the
augmented state ``(x, z)`` with generator ``diag(A, A)``: ``z`` carries the
predictor exactly (pure matrix exponential) and is reset to ``x`` at every
sampling instant.
"""

from __future__ import annotations

import io
import math
import weakref
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .analysis import _on_grid, fit_decay, sphere_samples, sup_ratio_curve
from .dynsys import (
    BlowUpError,
    EvolutionModel,
    Norm,
    SwitchingSignal,
    default_dt,
    evolve_batch,
    integrate,
    shift_signal,
    time_grid,
)
from .models import SemilinearModel

BISECTION_STEPS = 60
DELTA_MAX = 10.0
ROUNDOFF = 1e-12


# --------------------------------------------------------------------------
# Constants and delta*
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemConstants:
    """Group bound ``(Gamma, omega)``, Lipschitz constants of ``f``, ``K`` and of the Lyapunov functional.

    ``r`` and ``M`` (the decay constant at radius ``r``) are optional and only
    used for the validity radius ``rho = r/M``.
    """

    Gamma: float
    omega: float
    L_f: float
    L_K: float
    L_r: float
    r: float | None = None
    M: float | None = None

    def __post_init__(self):
        if not self.Gamma >= 1:
            raise ValueError("Gamma must be >= 1")
        if not self.omega >= 0:
            raise ValueError("omega must be >= 0")
        if not (self.L_f >= 0 and self.L_K >= 0):
            raise ValueError("L_f and L_K must be >= 0")
        if not self.L_r > 0:
            raise ValueError("L_r must be positive")

    @classmethod
    def unchecked(cls, **values) -> "SystemConstants":
        """Skip validation; for perturbation studies that falsify constants on purpose."""
        obj = object.__new__(cls)
        for name in ("Gamma", "omega", "L_f", "L_K", "L_r", "r", "M"):
            object.__setattr__(obj, name, values.get(name))
        return obj

    @property
    def rho(self) -> float | None:
        if self.r is None or self.M is None:
            return None
        return self.r / self.M

    def to_dict(self) -> dict:
        return {"Gamma": self.Gamma, "omega": self.omega, "L_f": self.L_f, "L_K": self.L_K,
                "L_r": self.L_r, "r": self.r, "M": self.M}

    @classmethod
    def from_dict(cls, d) -> "SystemConstants":
        allowed = {"Gamma", "omega", "L_f", "L_K", "L_r", "r", "M"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown constants keys: {sorted(unknown)}")
        missing = {"Gamma", "omega", "L_f", "L_K", "L_r"} - set(d)
        if missing:
            raise ValueError(f"missing constants: {sorted(missing)}")
        return cls(**{k: (None if d[k] is None else float(d[k])) for k in d})


def gronwall_c(k: SystemConstants, delta: float) -> float:
    """``c(delta) = Gamma^2 e^(2 omega delta) L_f (1 + L_K) exp(L_f delta Gamma e^(omega delta))``."""
    if k.omega * delta > 300:
        return math.inf
    G = k.Gamma * math.exp(k.omega * delta)
    expo = k.L_f * delta * G
    if expo > 700:
        return math.inf
    return G * G * k.L_f * (1 + k.L_K) * math.exp(expo)


def c_star(k: SystemConstants, delta: float) -> float:
    """Contraction defect; ``inf`` where ``c delta Gamma e^(omega delta) >= 1``."""
    c = gronwall_c(k, delta)
    g = c * delta * k.Gamma * math.exp(k.omega * delta) if math.isfinite(c) else math.inf
    if g >= 1:
        return math.inf
    return k.Gamma * k.L_r * k.L_f * k.L_K * g / (1 - g)


@dataclass(frozen=True)
class DeltaStar:
    value: float
    unbounded: bool = False
    capped: bool = False
    rho: float | None = None

    def to_dict(self) -> dict:
        return {"delta_star": None if self.unbounded else self.value, "unbounded": self.unbounded,
                "capped": self.capped, "rho": self.rho}


def delta_star(k: SystemConstants, margin: float = 1e-3, delta_max: float = DELTA_MAX,
               iterations: int = BISECTION_STEPS) -> DeltaStar:
    """Largest ``delta`` in ``[0, delta_max]`` with ``c*(delta) <= 1 - margin``, by bisection."""
    if k.L_f * k.L_K == 0:
        return DeltaStar(math.inf, unbounded=True, rho=k.rho)
    target = 1 - margin
    if c_star(k, delta_max) <= target:
        return DeltaStar(delta_max, capped=True, rho=k.rho)
    lo, hi = 0.0, delta_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if c_star(k, mid) <= target:
            lo = mid
        else:
            hi = mid
    return DeltaStar(lo, rho=k.rho)


# --------------------------------------------------------------------------
# Sampling schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingSchedule:
    """Instants ``s_1 < s_2 < ...`` (``s_0 = 0`` implicit); ``delta`` is the largest gap."""

    instants: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.instants)
        if not s or s[0] <= 0 or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("sampling instants must be positive and strictly increasing")
        object.__setattr__(self, "instants", s)

    @property
    def delta(self) -> float:
        return float(np.max(np.diff((0.0,) + self.instants)))

    @classmethod
    def uniform(cls, delta: float, horizon: float) -> "SamplingSchedule":
        if not delta > 0:
            raise ValueError("delta must be positive")
        n = int(math.ceil(horizon / delta - 1e-9))
        return cls(tuple(delta * (k + 1) for k in range(max(n, 1))))

    @classmethod
    def jittered(cls, delta: float, horizon: float, seed: int = 0, low: float = 0.5) -> "SamplingSchedule":
        """Gaps drawn uniformly from ``[low*delta, delta]``."""
        rng = np.random.default_rng(seed)
        s, out = 0.0, []
        while s < horizon:
            s += rng.uniform(low * delta, delta)
            out.append(s)
        return cls(tuple(out))

    def covers(self, horizon: float) -> bool:
        return self.instants[-1] >= horizon * (1 - 1e-12)

    def intervals(self, horizon: float) -> list[tuple[float, float]]:
        pts = [0.0] + [s for s in self.instants if s < horizon * (1 - 1e-12)] + [horizon]
        return list(zip(pts, pts[1:]))


# --------------------------------------------------------------------------
# Sampled loop
# --------------------------------------------------------------------------


_AUGMENTED: "weakref.WeakKeyDictionary[SemilinearModel, EvolutionModel]" = weakref.WeakKeyDictionary()


def _augmented(model: SemilinearModel) -> EvolutionModel:
    cached = _AUGMENTED.get(model)
    if cached is not None:
        return cached
    n = model.state_dim
    K = model.feedback
    A2 = block_diag(model.generator, model.generator)

    def make(fq):
        def N(XZ):
            out = np.zeros_like(XZ)
            out[..., :n] = fq(XZ[..., :n], K(XZ[..., n:]))
            return out

        return N

    gens, nl = {}, {}
    for q, fq in model.f.items():
        G = model.sampled_generator(q)
        gens[q], nl[q] = (A2, make(fq)) if G is None else (G, None)
    aug = EvolutionModel(gens, nl, name=f"{model.name}:sampled")
    _AUGMENTED[model] = aug
    return aug


@dataclass(frozen=True, eq=False)
class SampledRun:
    """Stored output of a sampled loop for a batch of initial states.

    ``states`` and ``predictor`` have shape ``(N, B, n)``; ``interval[i]`` is
    the sampling interval that produced row ``i`` (interval ends keep the
    pre-reset predictor).  ``anchors[k]`` is ``x(s_k)``.
    """

    times: np.ndarray
    states: np.ndarray
    predictor: np.ndarray
    interval: np.ndarray
    sample_times: np.ndarray
    anchors: np.ndarray
    delta: float
    norm: Norm = field(default_factory=Norm)

    def trajectory_csv(self, column: int = 0) -> str:
        buf = io.StringIO()
        n = self.states.shape[2]
        buf.write(",".join(["t"] + [f"x_{i}" for i in range(n)]) + "\n")
        for t, row in zip(self.times, self.states[:, column, :]):
            buf.write(",".join([format(float(t), ".17g")] + [format(float(v), ".17g") for v in row]) + "\n")
        return buf.getvalue()


def simulate_sampled_loop(
    model: SemilinearModel,
    schedule: SamplingSchedule,
    sig: SwitchingSignal,
    x0,
    horizon: float,
    dt: float | None = None,
) -> SampledRun:
    if model.feedback is None:
        raise ValueError("sampled loop needs a feedback law")
    if not schedule.covers(horizon):
        raise ValueError("sampling schedule does not cover the horizon")
    X = np.atleast_2d(np.asarray(x0, dtype=float))
    n = model.state_dim
    if X.shape[1] != n:
        raise ValueError(f"initial state has dimension {X.shape[1]}, model expects {n}")
    dt = default_dt(horizon) if dt is None else dt
    aug = _augmented(model)
    times, states, pred, idx, anchors, starts = [0.0], [X.copy()], [X.copy()], [0], [], []
    for k, (a, b) in enumerate(schedule.intervals(horizon)):
        anchors.append(X.copy())
        starts.append(a)
        local_sig = shift_signal(sig, a)
        grid = time_grid(b - a, dt, local_sig.switches_in(0.0, b - a))
        try:
            out = integrate(aug.step_matrices, aug.forcing_of, np.hstack([X, X]), local_sig, grid)
        except BlowUpError as exc:
            raise BlowUpError(a + exc.time, f"sampling interval {k}") from None
        for j in range(1, len(grid)):
            times.append(a + grid[j])
            states.append(out[j, :, :n])
            pred.append(out[j, :, n:])
            idx.append(k)
        X = out[-1, :, :n]
    return SampledRun(np.array(times), np.stack(states), np.stack(pred), np.array(idx),
                      np.array(starts), np.stack(anchors), schedule.delta, model.norm)


@dataclass
class MismatchReport:
    max_ratio: float
    bound_constant: float
    delta: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "bound_constant": self.bound_constant, "delta": self.delta,
                "violations": self.violations, "n_violations": len(self.violations)}


def mismatch_check(run: SampledRun, constants: SystemConstants, schedule: SamplingSchedule | None = None,
                   norm=None, tol: float = 0.01, max_listed: int = 20) -> MismatchReport:
    """Check ``||x(t) - expm(A (t - s_k)) x(s_k)|| <= c(delta) delta ||x(s_k)||`` at every stored time.

    Mismatches below ``ROUNDOFF * ||x(s_k)||`` count as zero.
    """
    norm = run.norm if norm is None else norm
    delta = run.delta if schedule is None else schedule.delta
    c = gronwall_c(constants, delta)
    base = np.asarray(norm(run.anchors[run.interval]))  # (N, B)
    # the state and predictor blocks are stepped by different blocks of one
    # exponential, so an exact predictor still leaves roundoff
    eps = np.maximum(np.asarray(norm(run.states - run.predictor)) - ROUNDOFF * base, 0.0)
    bound = c * delta * base
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, eps / bound, np.where(eps > 0, np.inf, 0.0))
    bad = np.argwhere(ratio > 1 + tol)
    viol = [{"t": float(run.times[i]), "interval": int(run.interval[i]), "sample": int(j), "ratio": float(ratio[i, j])}
            for i, j in bad[:max_listed]]
    if len(bad) > max_listed:
        viol.append({"truncated": int(len(bad) - max_listed)})
    return MismatchReport(float(ratio.max()) if ratio.size else 0.0, c, delta, viol)


# --------------------------------------------------------------------------
# Decay comparison
# --------------------------------------------------------------------------


def sampled_ratio_curve(model: SemilinearModel, schedule: SamplingSchedule, ensemble, X0, horizon, dt=None):
    """``(grid, s)`` with ``s(t) = max ||x(t)|| / ||x0||`` over signals and initial states."""
    dt = default_dt(horizon) if dt is None else dt
    grid = time_grid(horizon, dt)
    x_norm = np.asarray(model.norm(X0))
    s = np.zeros(len(grid))
    for sig in ensemble:
        run = simulate_sampled_loop(model, schedule, sig, X0, horizon, dt)
        nrm = np.asarray(model.norm(run.states))
        s = np.maximum(s, np.max(_on_grid(grid, run.times, nrm) / x_norm, axis=1))
    return grid, s


def compare_continuous_vs_sampled(
    model: SemilinearModel,
    ensemble: Sequence[SwitchingSignal],
    deltas: Sequence[float],
    horizon: float,
    radius: float = 1.0,
    samples: int = 4,
    dt: float | None = None,
    seed: int = 0,
    transient_fraction: float = 0.2,
    K=None,
    X0=None,
) -> list[dict]:
    """Fitted decay per row; ``delta = 0`` is the continuous feedback loop."""
    if K is not None:
        model = replace(model, feedback=K)
    if any(d < 0 for d in deltas):
        raise ValueError("delta values must be nonnegative")
    cl = model.closed_loop
    X0 = sphere_samples(cl, radius, samples, seed, include_axes=False) if X0 is None else np.atleast_2d(X0)
    rows = []
    for d in deltas:
        if d == 0:
            grid, s = sup_ratio_curve(cl, ensemble, radius, samples, horizon, dt, X0=X0)
        else:
            grid, s = sampled_ratio_curve(model, SamplingSchedule.uniform(d, horizon), ensemble, X0, horizon, dt)
        est = fit_decay(grid, s, radius, transient_fraction)
        rows.append({"delta": float(d), "lambda_hat": est.lam, "M_hat": est.M, "residual": est.residual})
    return rows


def decay_table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write("delta,lambda_hat,M_hat,residual\n")
    for r in rows:
        buf.write(f"{r['delta']:.17g},{r['lambda_hat']:.17g},{r['M_hat']:.17g},{r['residual']:.17g}\n")
    return buf.getvalue()


def estimate_lyapunov_lipschitz(model, params, ensemble, radius: float, pairs: int = 32, seed: int = 0,
                                dt: float | None = None) -> dict:
    """Heuristic ``L_r = exp(gamma t_bar) * l / gamma``.

    ``l`` is the largest observed ratio ``||phi(t,x) - phi(t,y)|| / ||x - y||``
    for ``t <= t_bar`` over sampled pairs in the ball.
    """
    rng = np.random.default_rng(seed)
    X = sphere_samples(model, radius, pairs, seed, include_axes=False) * rng.uniform(0.1, 1, (pairs, 1))
    Y = X + sphere_samples(model, 0.05 * radius, pairs, seed + 1, include_axes=False)
    d0 = np.asarray(model.norm(X - Y))
    ell = 1.0
    tb = params.t_bar
    if tb > 0:
        step = tb / 255 if dt is None else dt
        for sig in ensemble:
            _, SX = evolve_batch(model, X, sig, tb, step)
            _, SY = evolve_batch(model, Y, sig, tb, step)
            ell = max(ell, float(np.max(np.asarray(model.norm(SX - SY)) / d0)))
    return {"L_r": math.exp(params.gamma * tb) * ell / params.gamma, "flow_lipschitz": ell, "heuristic": True}
