"""Benchmark systems.

* switched linear ODEs ``x' = A_q x`` (closed-form oracles available),
* the 1D switched damped wave equation, semi-discretized by finite differences,
* linear retarded systems ``x'(t) = A_q x(t) + B_q x(t - tau_q)`` on a sampled
  history segment,
* semilinear control systems ``x' = A x + f_q(x, u)`` with a feedback ``u = K(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .dynsys import (
    BLOWUP_THRESHOLD,
    BlowUpError,
    EvolutionModel,
    Mode,
    Norm,
    SwitchingSignal,
    integrate,
)

# --------------------------------------------------------------------------
# Damping laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Damping:
    """Scalar damping law ``rho`` applied componentwise to the velocity."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    linear_coeff: float | None = None

    def __call__(self, v):
        return self.fn(v)


def parse_damping(spec: str | Damping) -> Damping:
    """Named presets ``linear:a``, ``sat:limit`` and ``atan:scale``.

    ``sat:L`` is ``clip(v, -L, L)``; ``atan:s`` is ``s*atan(v/s)`` (unit slope
    at the origin, saturating at ``s*pi/2``).
    """
    if isinstance(spec, Damping):
        return spec
    kind, _, arg = str(spec).partition(":")
    try:
        value = float(arg)
    except ValueError:
        raise ValueError(f"damping preset {spec!r} needs a numeric parameter") from None
    if kind == "linear":
        return Damping(spec, lambda v, a=value: a * v, abs(value), value)
    if kind == "sat":
        if value <= 0:
            raise ValueError("saturation limit must be positive")
        return Damping(spec, lambda v, L=value: np.clip(v, -L, L), 1.0)
    if kind == "atan":
        if value <= 0:
            raise ValueError("atan scale must be positive")
        return Damping(spec, lambda v, s=value: s * np.arctan(v / s), 1.0)
    raise ValueError(f"unknown damping preset {spec!r}")


# --------------------------------------------------------------------------
# Switched linear systems
# --------------------------------------------------------------------------


def build_linear_switched(matrices: Sequence) -> EvolutionModel:
    """Modes ``x' = A_q x`` indexed ``0..k-1``, Euclidean norm."""
    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
    if not mats:
        raise ValueError("need at least one matrix")
    n = mats[0].shape[0]
    for q, A in enumerate(mats):
        if A.shape != (n, n):
            raise ValueError(f"matrix {q} has shape {A.shape}, expected {(n, n)}")
    return EvolutionModel({q: A for q, A in enumerate(mats)}, name="linear_switched")


def common_lyapunov_matrix(matrices: Sequence, margin: float = 1e-3) -> np.ndarray | None:
    """SPD ``P >= I`` with ``A_q^T P + P A_q <= -margin*I`` for every ``q``, or ``None``.

    Semidefinite feasibility problem solved with cvxpy (optional dependency).
    """
    import cvxpy as cp

    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
    n = mats[0].shape[0]
    P = cp.Variable((n, n), symmetric=True)
    t = cp.Variable()
    I = np.eye(n)
    cons = [P >> I, P << t * I]
    cons += [A.T @ P + P @ A << -margin * I for A in mats]
    prob = cp.Problem(cp.Minimize(t), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        prob.solve(solver=cp.SCS)
    if prob.status not in ("optimal", "optimal_inaccurate") or P.value is None:
        return None
    Pv = (P.value + P.value.T) / 2
    if np.linalg.eigvalsh(Pv).min() <= 0:
        return None
    if max(np.linalg.eigvalsh(A.T @ Pv + Pv @ A).max() for A in mats) >= 0:
        return None
    return Pv


# --------------------------------------------------------------------------
# Damped wave equation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WaveModelConfig:
    """``psi_tt = psi_xx - rho_q(psi_t)`` on ``(0, 1)`` with Dirichlet ends.

    ``sector_check`` is ``"strict"`` (the two-sided sector bound must hold on
    the whole probe grid), ``"local"`` (the largest probe radius on which it
    holds is recorded) or ``"off"`` (diagnostic runs, e.g. ``rho = 0``).
    """

    n: int
    dampings: Sequence[str | Damping]
    alpha: float = 1.0
    sector_check: str = "strict"
    probe_radius: float = 10.0
    probe_points: int = 2001

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("grid_points must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("sector constant alpha must lie in (0, 1]")
        if self.sector_check not in ("strict", "local", "off"):
            raise ValueError("sector_check must be 'strict', 'local' or 'off'")
        if not self.dampings:
            raise ValueError("need at least one damping mode")


def wave_operators(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """``(A, P, lap, h)``: skew generator, energy weight, Dirichlet Laplacian, spacing.

    ``x^T P x = h*|D_h x_1|^2 + h*|x_2|^2`` with forward differences ``D_h``
    including both boundary links, and ``D_h^T D_h = -lap``.
    """
    h = 1.0 / (n + 1)
    lap = (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / h**2
    I = np.eye(n)
    Z = np.zeros((n, n))
    A = np.block([[Z, I], [lap, Z]])
    P = h * np.block([[-lap, Z], [Z, I]])
    return A, P, lap, h


def _sector_radius(rho: Damping, alpha: float, radius: float, points: int) -> tuple[float, float | None]:
    """Largest probe radius where the sector bound holds, and the first failing ``v``."""
    v = np.linspace(0.0, radius, points // 2 + 1)[1:]
    v = np.concatenate([v, -v])
    r = np.asarray(rho(v), dtype=float)
    slack = 1e-12 * np.abs(v)
    ok = (alpha * np.abs(v) <= np.abs(r) + slack) & (np.abs(r) <= np.abs(v) / alpha + slack)
    if ok.all():
        return radius, None
    bad = np.abs(v[~ok])
    first = float(bad.min())
    good = np.abs(v[ok])
    return float(good[good < first].max()) if np.any(good < first) else 0.0, first


def _check_dampings(cfg: WaveModelConfig) -> tuple[list[Damping], dict]:
    laws = [parse_damping(d) for d in cfg.dampings]
    meta: dict[str, Any] = {"alpha": cfg.alpha, "sector_check": cfg.sector_check}
    if abs(float(laws[0](np.zeros(1))[0])) > 0 or any(float(r(np.zeros(1))[0]) != 0 for r in laws):
        raise ValueError("damping laws must vanish at 0")
    if cfg.sector_check == "off":
        return laws, meta
    radii = {}
    for q, rho in enumerate(laws):
        rad, first_bad = _sector_radius(rho, cfg.alpha, cfg.probe_radius, cfg.probe_points)
        if first_bad is not None and (cfg.sector_check == "strict" or rad == 0.0):
            raise ValueError(
                f"damping {q} ({rho.name}) violates the sector bound with alpha={cfg.alpha} at v={first_bad:.6g}"
            )
        radii[q] = rad
    meta["sector_radius"] = radii
    return laws, meta


def build_wave(cfg: WaveModelConfig) -> EvolutionModel:
    """Semi-discretized switched damped wave equation.

    State ``(displacement, velocity)`` at the ``n`` interior nodes, energy
    norm ``sqrt(x^T P x)``.  Linear dampings are folded into the mode
    generator so those modes are stepped exactly.
    """
    laws, meta = _check_dampings(cfg)
    n = cfg.n
    A, P, _, h = wave_operators(n)
    gens, nonlin = {}, {}
    for q, rho in enumerate(laws):
        if rho.linear_coeff is not None:
            Aq = A.copy()
            Aq[n:, n:] -= rho.linear_coeff * np.eye(n)
            gens[q], nonlin[q] = Aq, None
        else:
            gens[q] = A
            nonlin[q] = _velocity_damping(rho, n)
    meta.update(n=n, h=h, dampings=[r.name for r in laws])
    return EvolutionModel(gens, nonlin, Norm.weighted(P), name="wave", meta=meta)


def _velocity_damping(rho: Damping, n: int):
    def f(X):
        out = np.zeros_like(X)
        out[..., n:] = -rho(X[..., n:])
        return out

    return f


def energy(model, x) -> np.ndarray | float:
    """Squared model norm (twice the discrete wave energy for wave models)."""
    n = model.norm(x)
    return n * n


# --------------------------------------------------------------------------
# Retarded systems with piecewise constant delays
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DelayModelConfig:
    """Per-mode ``x'(t) = A_q x(t) + B_q x(t - tau_q)``, history on ``[-r, 0]`` with ``m+1`` samples."""

    A: Sequence
    B: Sequence
    tau: Sequence[float]
    r: float
    m: int

    def __post_init__(self):
        if not (len(self.A) == len(self.B) == len(self.tau)) or not self.A:
            raise ValueError("A, B and tau need one entry per mode")
        if int(self.m) < 2:
            raise ValueError("history grid needs m >= 2")
        for q, tq in enumerate(self.tau):
            if not 0 < tq <= self.r:
                raise ValueError(f"delay of mode {q} must satisfy 0 < tau <= r")


class DelayModel:
    """Retarded system on the sampled history segment ``x_t``.

    The state is ``(x(t-r), x(t-r+D), ..., x(t))`` stacked oldest first,
    ``D = r/m``, with the sup-over-samples Euclidean norm.  Integration is
    Heun's method on a fine time grid; delayed values and history samples
    are read off the stored solution by linear interpolation.
    """

    name = "delay"

    def __init__(self, cfg: DelayModelConfig):
        self.config = cfg
        self._A = {q: np.atleast_2d(np.asarray(a, dtype=float)) for q, a in enumerate(cfg.A)}
        self._B = {q: np.atleast_2d(np.asarray(b, dtype=float)) for q, b in enumerate(cfg.B)}
        self._tau = {q: float(t) for q, t in enumerate(cfg.tau)}
        n = self._A[0].shape[0]
        for q in self._A:
            if self._A[q].shape != (n, n) or self._B[q].shape != (n, n):
                raise ValueError(f"mode {q}: A and B must be {n}x{n}")
        self.n = n
        self.m = int(cfg.m)
        self.r = float(cfg.r)
        self.norm = Norm.sup(block=n)
        self.theta = -self.r + (self.r / self.m) * np.arange(self.m + 1)
        self.meta = {"n": n, "m": self.m, "r": self.r, "tau": list(cfg.tau)}

    @property
    def state_dim(self) -> int:
        return self.n * (self.m + 1)

    @property
    def modes(self) -> tuple:
        return tuple(self._A)

    is_linear = True

    def energy(self, x):
        return energy(self, x)

    def lipschitz_bound(self, q: Mode) -> float:
        return float(np.linalg.norm(self._A[q], 2) + np.linalg.norm(self._B[q], 2))

    def rhs(self, q: Mode, psi) -> np.ndarray:
        """``f_q(psi) = A_q psi(0) + B_q psi(-tau_q)`` for a sampled history ``psi``."""
        H = np.asarray(psi, dtype=float).reshape(self.m + 1, self.n)
        delayed = np.array([np.interp(-self._tau[q], self.theta, H[:, j]) for j in range(self.n)])
        return self._A[q] @ H[-1] + self._B[q] @ delayed

    def check_step(self, dt: float) -> None:
        D = self.r / self.m
        k = D / dt
        if abs(k - round(k)) > 1e-9 * max(k, 1.0) or round(k) < 1:
            raise ValueError(f"dt must divide r/m = {D:.12g}; use dt = {D:.12g}/k for an integer k")
        if dt > min(self._tau.values()) + 1e-15:
            raise ValueError(f"dt must not exceed the smallest delay {min(self._tau.values()):.6g}")

    def propagate(self, X0: np.ndarray, sig: SwitchingSignal, times: np.ndarray, dt: float) -> np.ndarray:
        self.check_step(dt)
        n, m1 = self.n, self.m + 1
        B = X0.shape[0]
        cap = m1 + len(times)
        Th = np.empty(cap)
        Xh = np.empty((cap, B, n))
        Th[:m1] = self.theta
        Xh[:m1] = X0.reshape(B, m1, n).transpose(1, 0, 2)
        count = m1

        def lerp(s):
            s = np.atleast_1d(s)
            j = np.clip(np.searchsorted(Th[:count], s, side="right") - 1, 0, count - 2)
            w = ((s - Th[j]) / (Th[j + 1] - Th[j]))[:, None, None]
            return Xh[j] * (1 - w) + Xh[j + 1] * w

        out = np.empty((len(times), B, n * m1))
        out[0] = X0
        x = Xh[m1 - 1].copy()
        for i in range(len(times) - 1):
            t = times[i]
            h = times[i + 1] - t
            q = sig.mode_at(t)
            AT, BT, tau = self._A[q].T, self._B[q].T, self._tau[q]
            k1 = x @ AT + lerp(t - tau)[0] @ BT
            xp = x + h * k1
            k2 = xp @ AT + lerp(t + h - tau)[0] @ BT
            x = x + (h / 2) * (k1 + k2)
            if not np.all(np.abs(x) <= BLOWUP_THRESHOLD):
                raise BlowUpError(times[i + 1], f"delay mode {q!r}")
            Th[count] = times[i + 1]
            Xh[count] = x
            count += 1
            out[i + 1] = lerp(times[i + 1] + self.theta).transpose(1, 0, 2).reshape(B, -1)
        return out


def build_delay(cfg: DelayModelConfig) -> DelayModel:
    return DelayModel(cfg)


def constant_history(model: DelayModel, value) -> np.ndarray:
    """History segment equal to ``value`` at every sample."""
    return np.tile(np.asarray(value, dtype=float).reshape(model.n), model.m + 1)


# --------------------------------------------------------------------------
# Semilinear control systems
# --------------------------------------------------------------------------


def _op_norm(out_norm: Norm, in_norm: Norm, M: np.ndarray) -> float:
    """Induced norm of ``M`` from ``(R^k, in_norm)`` to ``(R^n, out_norm)``."""

    def factor(nrm: Norm, dim: int):
        if nrm.kind == "euclidean":
            return np.eye(dim)
        if nrm.kind == "weighted":
            return nrm._factor
        raise ValueError("operator norms are supported for euclidean and weighted norms only")

    Lo = factor(out_norm, M.shape[0])
    Li = factor(in_norm, M.shape[1])
    return float(np.linalg.norm(Lo.T @ M @ np.linalg.inv(Li.T), 2))


def log_norm(norm: Norm, A: np.ndarray) -> float:
    """Logarithmic norm ``mu(A)``, so that ``||expm(A t)|| <= exp(mu(A) t)`` for ``t >= 0``."""
    A = np.asarray(A, dtype=float)
    L = np.eye(A.shape[0]) if norm.kind == "euclidean" else norm._factor
    At = L.T @ A @ np.linalg.inv(L.T)
    return float(np.linalg.eigvalsh((At + At.T) / 2).max())


@dataclass(frozen=True, eq=False)
class SemilinearModel:
    """``x' = A x + f_q(x, u)``; ``A`` generates a group, ``f_q(0, 0) = 0``.

    ``f[q]`` and ``feedback`` act on batched arrays along the last axis.
    ``Gamma``, ``omega``, ``L_f`` and ``L_K`` are the group bound
    ``||expm(A t)|| <= Gamma exp(omega |t|)`` and the Lipschitz constants of
    ``f`` (with respect to ``||dx|| + ||du||``) and of ``K``.

    Optional ``linear_parts[q] = (C_q, B_q)`` declares ``f_q(x, u) = C_q x + B_q u``
    and ``feedback_matrix`` declares ``K(x) = K x``; derived loops then step
    those modes exactly with matrix exponentials.
    """

    generator: np.ndarray
    f: Mapping[Mode, Callable[[np.ndarray, np.ndarray], np.ndarray]]
    input_dim: int
    feedback: Callable[[np.ndarray], np.ndarray] | None = None
    norm: Norm = field(default_factory=Norm)
    input_norm: Norm = field(default_factory=Norm)
    Gamma: float = 1.0
    omega: float = 0.0
    L_f: float = 0.0
    L_K: float = 0.0
    name: str = "semilinear"
    meta: Mapping[str, Any] = field(default_factory=dict)
    linear_parts: Mapping[Mode, tuple] = field(default_factory=dict)
    feedback_matrix: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.generator, dtype=float)
        object.__setattr__(self, "generator", A)
        parts = {q: (np.asarray(C, dtype=float), np.asarray(B, dtype=float)) for q, (C, B) in self.linear_parts.items()}
        object.__setattr__(self, "linear_parts", parts)
        n, m = A.shape[0], self.input_dim
        X, U = np.zeros((1, n)), np.zeros((1, m))
        for q, fq in self.f.items():
            if np.any(np.asarray(fq(X, U)) != 0):
                raise ValueError(f"f_{q}(0, 0) must vanish")
        if self.feedback is not None and np.any(np.asarray(self.feedback(X)) != 0):
            raise ValueError("feedback must satisfy K(0) = 0")
        if self.Gamma < 1 or self.omega < 0:
            raise ValueError("group bound needs Gamma >= 1 and omega >= 0")

    @property
    def state_dim(self) -> int:
        return self.generator.shape[0]

    @property
    def modes(self) -> tuple:
        return tuple(self.f)

    def group_bound_violation(self, T: float = 5.0, samples: int = 64, seed: int = 0) -> float:
        """Max of ``||expm(A t)|| / (Gamma exp(omega |t|))`` over sampled ``t`` in ``[-T, T]``."""
        ts = np.random.default_rng(seed).uniform(-T, T, samples)
        return max(self.norm.induced(expm(self.generator * t)) / (self.Gamma * math.exp(self.omega * abs(t))) for t in ts)

    def is_linear_mode(self, q: Mode, with_feedback: bool = True) -> bool:
        return q in self.linear_parts and (self.feedback_matrix is not None or not with_feedback)

    def sampled_generator(self, q: Mode) -> np.ndarray | None:
        """``[[A + C_q, B_q K], [0, A]]`` for the (state, predictor) pair of a linear mode."""
        if not self.is_linear_mode(q):
            return None
        C, B = self.linear_parts[q]
        Z = np.zeros_like(self.generator)
        return np.block([[self.generator + C, B @ self.feedback_matrix], [Z, self.generator]])

    @cached_property
    def closed_loop(self) -> EvolutionModel:
        """Continuous feedback ``u = K(x)``."""
        if self.feedback is None:
            raise ValueError("model has no feedback law")
        K = self.feedback
        gens, nl = {}, {}
        for q, fq in self.f.items():
            if self.is_linear_mode(q):
                C, B = self.linear_parts[q]
                gens[q], nl[q] = self.generator + C + B @ self.feedback_matrix, None
            else:
                gens[q], nl[q] = self.generator, (lambda X, fq=fq: fq(X, K(X)))
        return EvolutionModel(gens, nl, self.norm, name=f"{self.name}:closed_loop")

    @cached_property
    def unforced(self) -> EvolutionModel:
        """Input ``u = 0``."""
        m = self.input_dim
        gens, nl = {}, {}
        for q, fq in self.f.items():
            if q in self.linear_parts:
                gens[q], nl[q] = self.generator + self.linear_parts[q][0], None
            else:
                gens[q], nl[q] = self.generator, (lambda X, fq=fq: fq(X, np.zeros(X.shape[:-1] + (m,))))
        return EvolutionModel(gens, nl, self.norm, name=f"{self.name}:unforced")

    def step_matrices(self, h: float):
        return self.unforced.step_matrices(self.modes[0], h)


def build_wave_semilinear(cfg: WaveModelConfig) -> SemilinearModel:
    """Wave equation as ``x' = A x + f_q(x, u)`` with ``f_q = (0, -rho_q(u))`` and ``K(x) = x_2``.

    ``A`` is the undamped (skew) generator, an isometry group in the energy
    norm, so ``Gamma = 1`` and ``omega = 0``.  Inputs live in the discrete
    ``L^2`` space of velocities.
    """
    laws, meta = _check_dampings(cfg)
    n = cfg.n
    A, P, _, h = wave_operators(n)

    def make_f(rho):
        def f(X, U):
            out = np.zeros(np.broadcast_shapes(X.shape, U.shape[:-1] + (2 * n,)))
            out[..., n:] = -rho(U)
            return out

        return f

    meta.update(n=n, h=h, dampings=[r.name for r in laws])
    Zn = np.zeros((n, n))
    linear = {q: (np.zeros((2 * n, 2 * n)), np.vstack([Zn, -rho.linear_coeff * np.eye(n)]))
              for q, rho in enumerate(laws) if rho.linear_coeff is not None}
    return SemilinearModel(
        generator=A,
        f={q: make_f(rho) for q, rho in enumerate(laws)},
        input_dim=n,
        feedback=lambda X: X[..., n:],
        norm=Norm.weighted(P),
        input_norm=Norm.weighted(h * np.eye(n)),
        Gamma=1.0,
        omega=0.0,
        L_f=max(r.lipschitz for r in laws),
        L_K=1.0,
        name="wave_semilinear",
        meta=meta,
        linear_parts=linear,
        feedback_matrix=np.hstack([Zn, np.eye(n)]),
    )


@dataclass(frozen=True)
class SemilinearModelConfig:
    """Linear-structure semilinear system ``f_q(x, u) = C_q x + B_q sat(u)``, ``K(x) = K x``.

    ``saturation`` (optional) clips each input coordinate to ``[-s, s]``.
    The group constants are derived from the logarithmic norms of ``A`` and
    ``-A`` unless given explicitly.
    """

    A: Any
    B: Sequence
    C: Sequence | None = None
    K: Any = None
    saturation: float | None = None
    Gamma: float | None = None
    omega: float | None = None


def build_semilinear(cfg: SemilinearModelConfig) -> SemilinearModel:
    A = np.atleast_2d(np.asarray(cfg.A, dtype=float))
    n = A.shape[0]
    Bs = [np.asarray(b, dtype=float).reshape(n, -1) for b in cfg.B]
    m = Bs[0].shape[1]
    Cs = [np.zeros((n, n))] * len(Bs) if cfg.C is None else [np.asarray(c, dtype=float).reshape(n, n) for c in cfg.C]
    if len(Cs) != len(Bs):
        raise ValueError("B and C need one entry per mode")
    if any(b.shape != (n, m) for b in Bs):
        raise ValueError("all input matrices must share a shape")
    sat = cfg.saturation
    norm = Norm()

    def make_f(Bq, Cq):
        BT, CT = Bq.T, Cq.T

        def f(X, U):
            U = U if sat is None else np.clip(U, -sat, sat)
            return X @ CT + U @ BT

        return f

    K = None
    Km = None
    L_K = 0.0
    if cfg.K is not None:
        Km = np.asarray(cfg.K, dtype=float).reshape(m, n)
        KT = Km.T
        K = lambda X: X @ KT
        L_K = float(np.linalg.norm(Km, 2))
    if cfg.omega is None:
        omega = max(0.0, log_norm(norm, A), log_norm(norm, -A))
        Gamma = 1.0 if cfg.Gamma is None else float(cfg.Gamma)
    else:
        omega = float(cfg.omega)
        Gamma = 1.0 if cfg.Gamma is None else float(cfg.Gamma)
    L_f = max(max(_op_norm(norm, norm, c), _op_norm(norm, norm, b)) for b, c in zip(Bs, Cs))
    model = SemilinearModel(
        generator=A,
        f={q: make_f(b, c) for q, (b, c) in enumerate(zip(Bs, Cs))},
        input_dim=m,
        feedback=K,
        norm=norm,
        input_norm=Norm(),
        Gamma=Gamma,
        omega=omega,
        L_f=L_f,
        L_K=L_K,
        meta={"saturation": sat},
        linear_parts={} if sat is not None else {q: (c, b) for q, (b, c) in enumerate(zip(Bs, Cs))},
        feedback_matrix=Km,
    )
    if model.group_bound_violation() > 1 + 1e-9:
        raise ValueError("group bound ||expm(At)|| <= Gamma exp(omega|t|) fails on probe times")
    return model


# --------------------------------------------------------------------------
# JSON model documents
# --------------------------------------------------------------------------

_MODEL_KEYS = {
    "wave": {"kind", "n", "dampings", "alpha", "sector_check", "probe_radius"},
    "delay": {"kind", "A", "B", "tau", "r", "m"},
    "linear_switched": {"kind", "matrices"},
    "semilinear": {"kind", "base", "n", "dampings", "alpha", "sector_check", "probe_radius",
                   "A", "B", "C", "K", "saturation", "Gamma", "omega"},
}


def model_from_dict(doc: Mapping):
    """Build a model from a JSON document tagged by ``"kind"``."""
    kind = doc.get("kind")
    if kind not in _MODEL_KEYS:
        raise ValueError(f"model kind must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
    unknown = set(doc) - _MODEL_KEYS[kind]
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")

    def wave_cfg():
        return WaveModelConfig(
            n=int(doc["n"]),
            dampings=list(doc["dampings"]),
            alpha=float(doc.get("alpha", 1.0)),
            sector_check=doc.get("sector_check", "strict"),
            probe_radius=float(doc.get("probe_radius", 10.0)),
        )

    if kind == "wave":
        return build_wave(wave_cfg())
    if kind == "delay":
        return build_delay(DelayModelConfig(doc["A"], doc["B"], doc["tau"], float(doc["r"]), int(doc["m"])))
    if kind == "linear_switched":
        return build_linear_switched(doc["matrices"])
    if doc.get("base") == "wave":
        return build_wave_semilinear(wave_cfg())
    if "A" not in doc or "B" not in doc:
        raise ValueError("semilinear model needs 'A' and 'B' (or base='wave')")
    return build_semilinear(
        SemilinearModelConfig(
            A=doc["A"], B=doc["B"], C=doc.get("C"), K=doc.get("K"), saturation=doc.get("saturation"),
            Gamma=doc.get("Gamma"), omega=doc.get("omega"),
        )
    )
