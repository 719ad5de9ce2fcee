"""Forced trajectories and empirical L^p gains of the input-to-state map from ``x0 = 0``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import datko_check, dumps
from .dynsys import SwitchingSignal, Trajectory, default_dt, evolve, integrate, time_grid
from .models import SemilinearModel

KINDS = ("piecewise_constant_table", "sinusoid", "impulse_train")


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Input ``u: [0, inf) -> R^m``.

    * ``piecewise_constant_table``: ``times`` (starting at 0) and ``values``
      (one row per interval, right-continuous);
    * ``sinusoid``: ``amp * sin(2 pi freq t + phase) * direction``;
    * ``impulse_train``: ``amp * direction`` on ``[k*period, k*period + width)``,
      zero elsewhere (``width`` defaults to ``period/10``).
    """

    kind: str
    dim: int
    amp: float = 1.0
    direction: tuple | None = None
    times: tuple = ()
    values: tuple = ()
    freq: float = 0.0
    phase: float = 0.0
    period: float = 0.0
    width: float | None = None
    _norms: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"input kind must be one of {KINDS}")
        d = np.ones(self.dim) if self.direction is None else np.asarray(self.direction, dtype=float).reshape(self.dim)
        object.__setattr__(self, "direction", tuple(d))
        if self.kind == "piecewise_constant_table":
            t = tuple(float(v) for v in self.times)
            vals = np.asarray(self.values, dtype=float).reshape(len(t), self.dim)
            if not t or t[0] != 0 or any(b <= a for a, b in zip(t, t[1:])):
                raise ValueError("table times must start at 0 and increase strictly")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", tuple(map(tuple, vals)))
        elif self.kind == "sinusoid" and not self.freq >= 0:
            raise ValueError("frequency must be nonnegative")
        elif self.kind == "impulse_train":
            if not self.period > 0:
                raise ValueError("impulse period must be positive")
            w = self.period / 10 if self.width is None else float(self.width)
            if not 0 < w < self.period:
                raise ValueError("impulse width must lie in (0, period)")
            object.__setattr__(self, "width", w)

    @classmethod
    def constant(cls, value) -> "InputSignal":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls("piecewise_constant_table", len(v), times=(0.0,), values=(tuple(v),))

    @classmethod
    def zero(cls, dim: int) -> "InputSignal":
        return cls.constant(np.zeros(dim))

    @property
    def is_zero(self) -> bool:
        if self.kind == "piecewise_constant_table":
            return not np.any(np.asarray(self.values))
        return self.amp == 0 or not np.any(self.direction)

    def __call__(self, t) -> np.ndarray:
        """``u(t)``; an array of times gives shape ``(N, m)``."""
        t = np.asarray(t, dtype=float)
        d = np.asarray(self.direction)
        if self.kind == "piecewise_constant_table":
            idx = np.searchsorted(self.times, t, side="right") - 1
            return np.asarray(self.values)[np.clip(idx, 0, None)]
        if self.kind == "sinusoid":
            return (self.amp * np.sin(2 * np.pi * self.freq * t + self.phase))[..., None] * d
        on = np.mod(t, self.period) < self.width
        return (self.amp * on)[..., None] * d

    def breakpoints(self, horizon: float) -> list[float]:
        if self.kind == "piecewise_constant_table":
            return [t for t in self.times[1:] if t < horizon]
        if self.kind == "impulse_train":
            k = np.arange(int(horizon / self.period) + 1) * self.period
            return sorted(float(v) for v in np.concatenate([k, k + self.width]) if 0 < v < horizon)
        return []

    def piece(self, t0: float, t1: float):
        """Smooth restriction of ``u`` to ``[t0, t1]``, an interval free of breakpoints."""
        if self.kind == "sinusoid":
            return self
        value = self(0.5 * (t0 + t1))
        return lambda t: value

    def lp_norm(self, p: float, times: np.ndarray, norm=None) -> float:
        """``L^p`` norm on the grid ``times`` (trapezoid; max for ``p = inf``), cached."""
        key = (p, len(times), float(times[-1]), None if norm is None else id(norm))
        hit = self._norms.get(key)
        if hit is not None:
            return hit
        U = self(times)
        vals = np.linalg.norm(U, axis=-1) if norm is None else np.asarray(norm(U))
        out = float(vals.max()) if math.isinf(p) else float(np.trapezoid(vals**p, times) ** (1 / p))
        self._norms[key] = out
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == "piecewise_constant_table":
            d.update(times=list(self.times), values=[list(v) for v in self.values])
        else:
            d.update(amp=self.amp, direction=list(self.direction))
            if self.kind == "sinusoid":
                d.update(freq=self.freq, phase=self.phase)
            else:
                d.update(period=self.period, width=self.width)
        return d

    @classmethod
    def from_dict(cls, d) -> "InputSignal":
        d = dict(d)
        return cls(**d)


def _forcing(model: SemilinearModel, u):
    m = model.input_dim

    def forcing_of(q):
        if q in model.linear_parts:
            BT = model.linear_parts[q][1].T
            return lambda t, X: np.broadcast_to(u(t) @ BT, X.shape)
        fq = model.f[q]
        return lambda t, X: fq(X, np.broadcast_to(u(t), X.shape[:-1] + (m,)))

    return forcing_of


def evolve_forced(
    model: SemilinearModel,
    u: InputSignal,
    sig: SwitchingSignal,
    x0,
    horizon: float,
    dt: float | None = None,
) -> Trajectory:
    """Forced trajectory; ``u`` identically zero takes the unforced path unchanged."""
    if u.dim != model.input_dim:
        raise ValueError(f"input has dimension {u.dim}, model expects {model.input_dim}")
    if u.is_zero:
        return evolve(model.unforced, x0, sig, horizon, dt)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dt = default_dt(horizon) if dt is None else dt
    times = time_grid(horizon, dt, list(sig.switches_in(0.0, horizon)) + u.breakpoints(horizon))
    step = model.unforced.step_matrices
    # one integration per input piece so no Runge-Kutta stage straddles a jump
    cuts = np.searchsorted(times, u.breakpoints(horizon))
    bounds = [0, *cuts.tolist(), len(times) - 1]
    states = np.empty((len(times), 1, len(x0)))
    states[0, 0] = x0
    for a, b in zip(bounds, bounds[1:]):
        if b > a:
            seg = times[a : b + 1]
            states[a : b + 1] = integrate(step, _forcing(model, u.piece(seg[0], seg[-1])), states[a], sig, seg)
    return Trajectory(times, states[:, 0, :], sig, x0.copy())


@dataclass
class GainReport:
    p: float
    gain: float
    theory_bound: float | None
    argmax_input: dict | None
    argmax_signal: dict | None
    max_final_ratio: float
    excluded_zero_inputs: int
    hypothesis: str = "not checked"

    def to_dict(self) -> dict:
        return {
            "p": "inf" if math.isinf(self.p) else self.p, "gain": self.gain, "theory_bound": self.theory_bound,
            "argmax_input": self.argmax_input, "argmax_signal": self.argmax_signal,
            "max_final_ratio": self.max_final_ratio, "excluded_zero_inputs": self.excluded_zero_inputs,
            "hypothesis": self.hypothesis, "initial_state": "zero",
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def theory_bound(model: SemilinearModel, p: float, L_V: float, c_lower: float, c_upper: float) -> float:
    """Gain bound from a Lipschitz coercive functional ``c_lower ||x|| <= V <= c_upper ||x||``.

    ``p = inf``: ``Gamma L_f L_V c_upper / c_lower``;
    finite ``p``: ``L_f L_V (c_upper / c_lower)^(p - 1)``.
    """
    if math.isinf(p):
        return model.Gamma * model.L_f * L_V * c_upper / c_lower
    return model.L_f * L_V * (c_upper / c_lower) ** (p - 1)


def lp_gain(
    model: SemilinearModel,
    p: float,
    inputs: Sequence[InputSignal],
    signals: Sequence[SwitchingSignal],
    horizon: float,
    dt: float | None = None,
    L_V: float | None = None,
    c_lower: float | None = None,
    c_upper: float | None = None,
    check_hypothesis: bool = False,
    seed: int = 0,
) -> GainReport:
    """Largest ``||phi_u(., 0, sigma)||_p / ||u||_p`` over the input and signal ensembles.

    Both norms are taken on ``[0, horizon]`` on the trajectory grid.
    ``max_final_ratio`` is the largest ``||phi_u(horizon)|| / ||u||_p``, a
    measure of what the truncation leaves out.
    """
    p = float(p)
    if not p >= 1:
        raise ValueError("p must lie in [1, inf]")
    hyp = "not checked"
    if check_hypothesis:
        rep = datko_check(model.unforced, 2, list(signals), [1.0], 4, horizon, dt, seed)
        hyp = rep.verdict
    n = model.state_dim
    best, arg_u, arg_s, final, skipped = 0.0, None, None, 0.0, 0
    for u in inputs:
        if u.is_zero:
            skipped += 1
            continue
        for s in signals:
            traj = evolve_forced(model, u, s, np.zeros(n), horizon, dt)
            un = u.lp_norm(p, traj.times, model.input_norm)
            if un == 0:
                skipped += 1
                continue
            xn = np.asarray(model.norm(traj.states))
            out = float(xn.max()) if math.isinf(p) else float(np.trapezoid(xn**p, traj.times) ** (1 / p))
            ratio = out / un
            final = max(final, float(xn[-1]) / un)
            if ratio > best:
                best, arg_u, arg_s = ratio, u.to_dict(), s.to_dict()
    tb = None
    if L_V is not None and c_lower is not None and c_upper is not None:
        tb = theory_bound(model, p, L_V, c_lower, c_upper)
    return GainReport(p, best, tb, arg_u, arg_s, final, skipped, hyp)


def default_input_ensemble(dim: int, horizon: float, count: int = 64, seed: int = 0,
                           amp_range: tuple = (1e-2, 1e2)) -> list[InputSignal]:
    """Constant, sinusoidal and pulse inputs with log-spaced amplitudes and seeded directions."""
    rng = np.random.default_rng(seed)
    amps = np.geomspace(amp_range[0], amp_range[1], count)
    out = [InputSignal.constant(np.ones(dim) / math.sqrt(dim))]
    for i in range(1, count):
        d = rng.standard_normal(dim)
        d /= np.linalg.norm(d)
        kind = KINDS[i % 3]
        a = float(amps[i])
        if kind == "piecewise_constant_table":
            k = int(rng.integers(1, 8))
            t = np.concatenate([[0.0], np.sort(rng.uniform(0, horizon, k - 1))])
            vals = a * rng.standard_normal((k, dim))
            out.append(InputSignal(kind, dim, times=tuple(np.unique(t)), values=tuple(map(tuple, vals[: len(np.unique(t))]))))
        elif kind == "sinusoid":
            f = float(np.exp(rng.uniform(np.log(0.01), np.log(2.0))))
            out.append(InputSignal(kind, dim, amp=a, direction=tuple(d), freq=f, phase=float(rng.uniform(0, 2 * np.pi))))
        else:
            per = float(rng.uniform(horizon / 50, horizon / 5))
            out.append(InputSignal(kind, dim, amp=a, direction=tuple(d), period=per))
    return out
