"""Forward complete switched systems: switching signals, per-mode flows, trajectories.

A model is a finite family of semilinear vector fields ``x' = A_q x + N_q(x)``
indexed by mode ``q``.  A :class:`SwitchingSignal` selects the active mode on
each interval ``[t_k, t_{k+1})``; the transition map is obtained by
concatenating the per-mode flows, with every switch time used as an
integration breakpoint.

Each mode is stepped with a Lawson (integrating-factor) Runge-Kutta 4 scheme:
the linear part is propagated exactly through ``expm(A_q h)`` and the
nonlinear part is handled by RK4 in the rotating frame.  Modes with no
nonlinearity reduce to pure matrix-exponential stepping, which is exact up to
round-off for any step size.

States are handled as row vectors.  Batches of initial states are stacked
along a leading axis, so nonlinear maps must act on the last axis of an
array of shape ``(..., n)``.
"""

from __future__ import annotations

import bisect
import io
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

logger = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
DEFAULT_STEPS = 4096
DEFAULT_ENSEMBLE_SIZE = 256

Mode = Hashable
Forcing = Callable[[float, np.ndarray], np.ndarray]


class BlowUpError(ArithmeticError):
    """A state coordinate left the finite range during integration."""

    def __init__(self, time: float, detail: str = ""):
        self.time = float(time)
        self.detail = detail
        msg = f"state blow-up at t={self.time:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


# --------------------------------------------------------------------------
# Norms
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Norm:
    """State-space norm descriptor.

    ``kind`` is ``"euclidean"``, ``"weighted"`` (``sqrt(x^T P x)`` for an SPD
    ``weight``) or ``"sup"`` (maximum over consecutive blocks of ``block``
    coordinates of the Euclidean norm of the block; ``block=1`` is the usual
    max-abs norm).
    """

    kind: str = "euclidean"
    weight: np.ndarray | None = None
    block: int = 1
    _factor: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("euclidean", "weighted", "sup"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "weighted":
            if self.weight is None:
                raise ValueError("weighted norm needs an SPD weight matrix")
            P = np.asarray(self.weight, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.allclose(P, P.T):
                raise ValueError("norm weight must be a symmetric square matrix")
            try:
                L = np.linalg.cholesky(P)
            except np.linalg.LinAlgError as exc:
                raise ValueError("norm weight is not positive definite") from exc
            object.__setattr__(self, "weight", P)
            object.__setattr__(self, "_factor", L)
        if self.block < 1:
            raise ValueError("block size must be positive")

    @classmethod
    def weighted(cls, P) -> "Norm":
        return cls("weighted", np.asarray(P, dtype=float))

    @classmethod
    def sup(cls, block: int = 1) -> "Norm":
        return cls("sup", block=block)

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if self.kind == "euclidean":
            out = np.sqrt(np.einsum("...i,...i->...", x, x))
        elif self.kind == "weighted":
            y = (x.reshape(-1, x.shape[-1]) @ self._factor).reshape(x.shape)
            out = np.sqrt(np.einsum("...i,...i->...", y, y))
        else:
            blocks = x.reshape(x.shape[:-1] + (-1, self.block))
            out = np.linalg.norm(blocks, axis=-1).max(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def induced(self, M) -> float:
        """Operator norm of ``x -> M x`` (an upper bound for block sup norms)."""
        M = np.asarray(M, dtype=float)
        if self.kind == "euclidean":
            return float(np.linalg.norm(M, 2))
        if self.kind == "weighted":
            L = self._factor
            return float(np.linalg.norm(L.T @ M @ np.linalg.inv(L.T), 2))
        if self.block == 1:
            return float(np.abs(M).sum(axis=1).max())
        b = self.block
        nb = M.shape[0] // b
        blocks = M.reshape(nb, b, nb, b)
        bn = np.array([[np.linalg.norm(blocks[i, :, j, :], 2) for j in range(nb)] for i in range(nb)])
        return float(bn.sum(axis=1).max())

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "weighted":
            d["weight"] = self.weight.tolist()
        if self.kind == "sup":
            d["block"] = self.block
        return d


# --------------------------------------------------------------------------
# Switching signals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SwitchingSignal:
    """Right-continuous piecewise constant map from ``[0, inf)`` to modes.

    ``modes[k]`` is active on ``[switch_times[k], switch_times[k+1])``; the
    last mode persists forever.
    """

    switch_times: tuple[float, ...]
    modes: tuple[Mode, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.switch_times)
        modes = tuple(self.modes)
        if not times:
            raise ValueError("a switching signal needs at least one interval")
        if len(times) != len(modes):
            raise ValueError("switch_times and modes must have equal length")
        if times[0] != 0.0:
            raise ValueError("switch_times must start at 0")
        if any(not math.isfinite(t) for t in times):
            raise ValueError("switch_times must be finite")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("switch_times must be strictly increasing")
        object.__setattr__(self, "switch_times", times)
        object.__setattr__(self, "modes", modes)

    @classmethod
    def constant(cls, mode: Mode) -> "SwitchingSignal":
        return cls((0.0,), (mode,))

    @property
    def is_constant(self) -> bool:
        return len(set(self.modes)) == 1

    def mode_at(self, t: float) -> Mode:
        if t < 0:
            raise ValueError("signals are defined on t >= 0")
        return self.modes[bisect.bisect_right(self.switch_times, t) - 1]

    def switches_in(self, a: float, b: float) -> list[float]:
        """Switch times strictly inside ``(a, b)``."""
        lo = bisect.bisect_right(self.switch_times, a)
        hi = bisect.bisect_left(self.switch_times, b)
        return list(self.switch_times[lo:hi])

    def first_dwell(self) -> float:
        return self.switch_times[1] if len(self.switch_times) > 1 else math.inf

    def to_dict(self) -> dict:
        return {"switch_times": list(self.switch_times), "modes": list(self.modes)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SwitchingSignal":
        return cls(tuple(d["switch_times"]), tuple(d["modes"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SwitchingSignal":
        return cls.from_dict(json.loads(text))


def shift_signal(sig: SwitchingSignal, tau: float) -> SwitchingSignal:
    """Time shift ``s -> sig(tau + s)``."""
    if tau < 0:
        raise ValueError("shift must be nonnegative")
    k = bisect.bisect_right(sig.switch_times, tau) - 1
    times = (0.0,) + tuple(t - tau for t in sig.switch_times[k + 1:])
    return SwitchingSignal(times, sig.modes[k:])


def concat_signal(sig1: SwitchingSignal, sig2: SwitchingSignal, tau: float) -> SwitchingSignal:
    """Follow ``sig1`` up to ``tau``, then ``sig2`` restarted at ``tau``."""
    if not tau > 0:
        raise ValueError("concatenation time must be positive")
    k = bisect.bisect_left(sig1.switch_times, tau)
    times = list(sig1.switch_times[:k])
    modes = list(sig1.modes[:k])
    tail_times = [tau + t for t in sig2.switch_times]
    tail_modes = list(sig2.modes)
    if modes[-1] == tail_modes[0]:
        tail_times, tail_modes = tail_times[1:], tail_modes[1:]
    return SwitchingSignal(tuple(times + tail_times), tuple(modes + tail_modes))


def random_signal_ensemble(
    mode_set: Sequence[Mode],
    min_dwell: float,
    max_dwell: float,
    horizon: float,
    count: int,
    seed: int,
) -> list[SwitchingSignal]:
    """Seeded dwell-time ensemble: dwells ~ U[min_dwell, max_dwell], modes ~ U(mode_set)."""
    mode_set = list(mode_set)
    if not mode_set:
        raise ValueError("mode_set must not be empty")
    if not 0 < min_dwell <= max_dwell:
        raise ValueError("need 0 < min_dwell <= max_dwell")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        times = [0.0]
        modes = [mode_set[rng.integers(len(mode_set))]]
        t = rng.uniform(min_dwell, max_dwell)
        while t < horizon:
            times.append(t)
            modes.append(mode_set[rng.integers(len(mode_set))])
            t += rng.uniform(min_dwell, max_dwell)
        out.append(SwitchingSignal(tuple(times), tuple(modes)))
    return out


def signal_ensemble(
    mode_set: Sequence[Mode],
    horizon: float,
    count: int = DEFAULT_ENSEMBLE_SIZE,
    min_dwell: float | None = None,
    max_dwell: float | None = None,
    seed: int = 0,
    include_constant: bool = True,
) -> list[SwitchingSignal]:
    """Finite surrogate for "all switching signals".

    All constant signals come first, followed by ``count`` random dwell-time
    signals.  Dwell bounds default to ``horizon/100`` and ``horizon/10``.
    """
    min_dwell = horizon / 100 if min_dwell is None else min_dwell
    max_dwell = horizon / 10 if max_dwell is None else max_dwell
    out = [SwitchingSignal.constant(q) for q in mode_set] if include_constant else []
    if count > 0 and (len(mode_set) > 1 or not include_constant):
        out += random_signal_ensemble(mode_set, min_dwell, max_dwell, horizon, count, seed)
    return out


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------


_CACHE_LIMIT = 4096
_CHECK_EVERY = 32


@dataclass(frozen=True, eq=False)
class EvolutionModel:
    """Finite family of modes ``x' = A_q x + N_q(x)`` on ``R^n``.

    ``generators[q]`` is the linear part of mode ``q`` (the full dynamics
    when the mode is linear).  ``nonlinear[q]`` is either ``None`` or a map
    acting on the last axis with ``N_q(0) = 0``.
    """

    generators: Mapping[Mode, np.ndarray]
    nonlinear: Mapping[Mode, Callable[[np.ndarray], np.ndarray] | None] = field(default_factory=dict)
    norm: Norm = field(default_factory=Norm)
    name: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)
    _cache: OrderedDict = field(default_factory=OrderedDict, init=False, repr=False)

    def __post_init__(self):
        gens = {}
        dim = None
        for q, A in self.generators.items():
            A = np.array(A, dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ValueError(f"generator of mode {q!r} must be square")
            if dim is None:
                dim = A.shape[0]
            elif A.shape[0] != dim:
                raise ValueError(f"generator of mode {q!r} has dimension {A.shape[0]}, expected {dim}")
            A.setflags(write=False)
            gens[q] = A
        if not gens:
            raise ValueError("a model needs at least one mode")
        unknown = set(self.nonlinear) - set(gens)
        if unknown:
            raise ValueError(f"nonlinearities given for unknown modes {sorted(map(str, unknown))}")
        nl = {q: self.nonlinear.get(q) for q in gens}
        zero = np.zeros((1, dim))
        for q, f in nl.items():
            if f is not None and np.any(np.asarray(f(zero)) != 0):
                raise ValueError(f"nonlinearity of mode {q!r} does not vanish at the origin")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "nonlinear", nl)

    @property
    def state_dim(self) -> int:
        return next(iter(self.generators.values())).shape[0]

    @property
    def modes(self) -> tuple:
        return tuple(self.generators)

    @property
    def is_linear(self) -> bool:
        return all(f is None for f in self.nonlinear.values())

    def generator_of(self, q: Mode) -> np.ndarray:
        return self.generators[q]

    def nonlinear_of(self, q: Mode):
        return self.nonlinear[q]

    def forcing_of(self, q: Mode) -> Forcing | None:
        f = self.nonlinear[q]
        if f is None:
            return None
        return lambda t, X: f(X)

    def step_matrices(self, q: Mode, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Transposed ``(expm(A_q h), expm(A_q h/2))`` for row-vector stepping."""
        return _cached_step_matrices(self._cache, q, self.generators[q], h)

    def propagate(self, X0: np.ndarray, sig: SwitchingSignal, times: np.ndarray, dt: float) -> np.ndarray:
        """States on ``times`` for a batch ``X0`` of shape ``(B, n)``; returns ``(N, B, n)``."""
        return integrate(self.step_matrices, self.forcing_of, X0, sig, times)

    def energy(self, x) -> np.ndarray | float:
        n = self.norm(x)
        return n * n


def _cached_step_matrices(cache: OrderedDict, key, A: np.ndarray, h: float):
    k = (key, float(h))
    hit = cache.get(k)
    if hit is not None:
        return hit
    E = expm(A * h)
    Eh = expm(A * (h / 2))
    val = (np.ascontiguousarray(E.T), np.ascontiguousarray(Eh.T))
    cache[k] = val
    if len(cache) > _CACHE_LIMIT:
        cache.popitem(last=False)
    return val


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------


def time_grid(horizon: float, dt: float, breakpoints: Iterable[float] = ()) -> np.ndarray:
    """Uniform grid of step ``dt`` on ``[0, horizon]`` merged with ``breakpoints``.

    Uniform nodes closer than ``1e-9*dt`` to a breakpoint are dropped, so each
    breakpoint inside the horizon appears exactly once.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    tol = 1e-9 * dt
    n = int(math.floor(horizon / dt + 1e-9))
    base = np.arange(n + 1) * dt
    if horizon - base[-1] > tol:
        base = np.append(base, horizon)
    else:
        base[-1] = horizon
    bps = np.unique(np.asarray([b for b in breakpoints if tol < b < horizon - tol], dtype=float))
    if bps.size == 0:
        return base
    idx = np.searchsorted(bps, base)
    dist = np.full(base.shape, np.inf)
    has_right = idx < bps.size
    dist[has_right] = np.abs(bps[idx[has_right]] - base[has_right])
    has_left = idx > 0
    dist[has_left] = np.minimum(dist[has_left], np.abs(base[has_left] - bps[idx[has_left] - 1]))
    keep = dist >= tol
    keep[0] = keep[-1] = True
    return np.union1d(base[keep], bps)


def lawson_rk4_step(X, t, h, ET, EhT, forcing: Forcing):
    """One integrating-factor RK4 step; ``ET``/``EhT`` are transposed propagators."""
    k1 = forcing(t, X)
    k2 = forcing(t + h / 2, (X + (h / 2) * k1) @ EhT)
    XEh = X @ EhT
    k3 = forcing(t + h / 2, XEh + (h / 2) * k2)
    XE = X @ ET
    k4 = forcing(t + h, XE + h * (k3 @ EhT))
    return XE + (h / 6) * (k1 @ ET + 2.0 * ((k2 + k3) @ EhT) + k4)


def integrate(
    step_matrices: Callable[[Mode, float], tuple[np.ndarray, np.ndarray]],
    forcing_of: Callable[[Mode], Forcing | None],
    X0: np.ndarray,
    sig: SwitchingSignal,
    times: np.ndarray,
    threshold: float = BLOWUP_THRESHOLD,
) -> np.ndarray:
    """March ``X0`` (shape ``(B, n)``) over ``times``; mode taken at each step start."""
    X = np.array(X0, dtype=float)
    out = np.empty((len(times),) + X.shape)
    out[0] = X
    steps = np.diff(times)
    modes = [sig.mode_at(t) for t in times[:-1]]
    mats: dict = {}
    forcings = {q: forcing_of(q) for q in set(modes)}
    last_checked = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (q, h) in enumerate(zip(modes, steps)):
            key = (q, h)
            pair = mats.get(key)
            if pair is None:
                pair = mats[key] = step_matrices(q, h)
            forcing = forcings[q]
            if forcing is None:
                X = X @ pair[0]
            else:
                X = lawson_rk4_step(X, times[i], h, pair[0], pair[1], forcing)
            out[i + 1] = X
            # blow-up check in chunks; the offending step is located exactly
            if (i + 1) % _CHECK_EVERY == 0 or i == len(steps) - 1:
                chunk = out[last_checked + 1 : i + 2]
                if not (np.abs(chunk).max(initial=0.0) <= threshold):
                    bad = ~np.all(np.abs(chunk.reshape(len(chunk), -1)) <= threshold, axis=1)
                    j = last_checked + 1 + int(np.argmax(bad))
                    raise BlowUpError(times[j], f"mode {modes[j - 1]!r}, |x|_max exceeded {threshold:g}")
                last_checked = i + 1
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled transition map ``t -> phi(t, x0, sig)``."""

    times: np.ndarray
    states: np.ndarray
    signal: SwitchingSignal
    initial_state: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def norms(self, norm: Norm) -> np.ndarray:
        return np.asarray(norm(self.states))

    def to_csv(self) -> str:
        return trajectory_to_csv(self)


def default_dt(horizon: float) -> float:
    return horizon / DEFAULT_STEPS


def evolve_batch(
    model: EvolutionModel,
    X0,
    sig: SwitchingSignal,
    horizon: float,
    dt: float | None = None,
    breakpoints: Iterable[float] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch of initial states; returns ``(times, states)`` with states ``(N, B, n)``."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[-1] != model.state_dim:
        raise ValueError(f"initial state has dimension {X0.shape[-1]}, model expects {model.state_dim}")
    dt = default_dt(horizon) if dt is None else dt
    times = time_grid(horizon, dt, list(sig.switches_in(0.0, horizon)) + list(breakpoints))
    return times, model.propagate(X0, sig, times, dt)


def evolve(
    model: EvolutionModel,
    x0,
    sig: SwitchingSignal,
    horizon: float,
    dt: float | None = None,
) -> Trajectory:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    times, states = evolve_batch(model, x0[None, :], sig, horizon, dt)
    return Trajectory(times, states[:, 0, :], sig, x0.copy())


def flow(model: EvolutionModel, X0, sig: SwitchingSignal, t: float, dt: float | None = None) -> np.ndarray:
    """Endpoint ``phi(t, X0, sig)`` for a single state or a batch."""
    X0 = np.asarray(X0, dtype=float)
    if t == 0:
        return X0.copy()
    _, states = evolve_batch(model, X0.reshape(-1, model.state_dim), sig, t, dt)
    return states[-1].reshape(X0.shape)


def semigroup_defect(
    model: EvolutionModel,
    x0,
    sig: SwitchingSignal,
    t: float,
    tau: float,
    dt: float | None = None,
) -> float:
    """``||phi(tau, phi(t, x, sig), T_t sig) - phi(t + tau, x, sig)||`` in the model norm."""
    direct = flow(model, x0, sig, t + tau, dt)
    mid = flow(model, x0, sig, t, dt)
    composed = flow(model, mid, shift_signal(sig, t), tau, dt)
    return float(model.norm(composed - direct))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_to_csv(traj: Trajectory) -> str:
    n = traj.states.shape[1]
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"x_{i}" for i in range(n)]) + "\n")
    for t, row in zip(traj.times, traj.states):
        buf.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")
    return buf.getvalue()


def trajectory_from_csv(text: str, signal: SwitchingSignal) -> Trajectory:
    lines = text.strip().splitlines()
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return Trajectory(data[:, 0], data[:, 1:], signal, data[0, 1:].copy())
