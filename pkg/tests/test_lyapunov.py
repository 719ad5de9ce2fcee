import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expostab.analysis import FunctionTable, decay_fit
from expostab.dynsys import SwitchingSignal, evolve_batch, signal_ensemble
from expostab.lyapunov import (
    LyapunovParams,
    dini,
    eval_alternative,
    eval_coercive,
    family_condition,
    make_functional,
    register_functional,
    verify_certificate,
)
from expostab.models import build_linear_switched

decay1 = build_linear_switched([[[-1.0]]])
grow1 = build_linear_switched([[[1.0]]])
CONST = [SwitchingSignal.constant(0)]
NONNORMAL = build_linear_switched([[[-1.0, 0.5], [0.0, -1.2]], [[-1.1, 0.0], [0.4, -0.9]]])


@pytest.fixture(scope="module")
def nonnormal_setup():
    ens = signal_ensemble([0, 1], 15.0, count=16, seed=0)
    est = decay_fit(NONNORMAL, ens, 1.0, 8, 15.0)
    return ens, LyapunovParams.from_decay(est.M, est.lam)


def test_params_validation_and_derived():
    p = LyapunovParams(0.5, math.e, 1.0)
    assert math.isclose(p.t_bar, 2.0)
    assert p.c_lower == 2 and math.isclose(p.c_upper, 2 * math.e)
    with pytest.raises(ValueError):
        LyapunovParams(1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        LyapunovParams(0.5, 0.9, 1.0)


def test_coercive_scalar_closed_form():
    p = LyapunovParams(0.5, 1.0, 1.0)
    assert p.t_bar == 0
    assert eval_coercive(decay1, [3.0], p, CONST) == 6.0
    assert eval_coercive(decay1, [0.0], p, CONST) == 0.0


def test_coercive_matches_dense_brute_force():
    model = build_linear_switched([[[-1.0]], [[-2.0]]])
    ens = signal_ensemble([0, 1], 10.0, count=8, seed=3)
    # inflate M so the time window is nontrivial
    p = LyapunovParams.from_decay(1.5, 1.0)
    x = np.array([[1.7]])
    V = eval_coercive(model, x, p, ens)
    dense = 0.0
    for s in ens:
        t, X = evolve_batch(model, x, s, p.t_bar, p.t_bar / 4095)
        dense = max(dense, np.max(np.exp(p.gamma * t) * np.abs(X[:, 0, 0])))
    assert math.isclose(V[0], dense / p.gamma, rel_tol=0.01)


def test_coercive_sandwich_and_homogeneity(nonnormal_setup):
    ens, p = nonnormal_setup
    X = np.random.default_rng(0).normal(size=(30, 2))
    V = eval_coercive(NONNORMAL, X, p, ens)
    nx = np.linalg.norm(X, axis=1)
    assert np.all(V >= nx / p.gamma * (1 - 1e-12))
    assert np.all(V <= p.M / p.gamma * nx * 1.02)
    assert np.allclose(eval_coercive(NONNORMAL, -2.5 * X, p, ens), 2.5 * V, rtol=1e-12)


def test_coercive_monotone_in_ensemble_and_grid(nonnormal_setup):
    ens, p = nonnormal_setup
    X = np.random.default_rng(1).normal(size=(10, 2))
    small = eval_coercive(NONNORMAL, X, p, ens[:4], 64)
    assert np.all(eval_coercive(NONNORMAL, X, p, ens, 64) >= small)
    # a grid of 127 points contains the 64-point grid
    assert np.all(eval_coercive(NONNORMAL, X, p, ens[:4], 127) >= small * (1 - 1e-12))


def test_alternative_scalar():
    assert abs(eval_alternative(decay1, [1.0], "integral_plus_sup", CONST, 20.0) - 2) < 1e-4
    assert eval_alternative(decay1, [0.0], "alt1", CONST, 20.0) == 0


def test_alternative_ordering_and_bounds(nonnormal_setup):
    ens, p = nonnormal_setup
    X = np.random.default_rng(2).normal(size=(20, 2))
    v1 = eval_alternative(NONNORMAL, X, "alt1", ens, 15.0, lam=p.lam)
    v2 = eval_alternative(NONNORMAL, X, "alt2", ens, 15.0, lam=p.lam)
    nx = np.linalg.norm(X, axis=1)
    assert np.all(v2 >= v1)
    assert np.all(v1 >= nx)
    assert np.all(v2 <= p.M * (1 + 1 / p.lam) * nx * 1.02)


def test_alternative_divergent_reported():
    with pytest.raises(ArithmeticError):
        eval_alternative(build_linear_switched([[[0.0]]]), [1.0], "alt1", CONST, 5.0)


def test_dini_quadratic_scalar():
    V = make_functional("quadratic", decay1)
    r = dini(decay1, V, np.array([2.0]), CONST[0])
    assert abs(r.estimate + 8) < 0.08
    assert r.converged and r.lower <= r.estimate <= r.upper
    assert abs(r.extrapolated + 8) < 1e-3


def test_dini_at_equilibrium():
    V = make_functional("quadratic", decay1)
    assert dini(decay1, V, np.array([0.0]), CONST[0]).estimate == 0


def test_dini_needs_three_steps():
    with pytest.raises(ValueError):
        dini(decay1, lambda X: X[:, 0], np.array([1.0]), CONST[0], (1e-2, 1e-3))


def test_coercive_dini_bound(nonnormal_setup):
    ens, p = nonnormal_setup
    V = make_functional("coercive", NONNORMAL, p, ens)
    rng = np.random.default_rng(5)
    for x in rng.normal(size=(5, 2)):
        s = ens[rng.integers(len(ens))]
        assert dini(NONNORMAL, V, x, s).estimate <= -np.linalg.norm(x) * 0.98


def test_certificate_coercive_passes(nonnormal_setup):
    ens, p = nonnormal_setup
    V = make_functional("coercive", NONNORMAL, p, ens)
    rep = verify_certificate(NONNORMAL, V, 1, 1.0, 6, ens[:3], c_lower=p.c_lower, c_upper=p.c_upper)
    assert rep.verdict and rep.kind == "coercive" and rep.samples_checked == 6
    assert json.loads(rep.to_json())["sampled"] is True


def test_certificate_zero_functional_fails_lower_bound():
    rep = verify_certificate(decay1, lambda X: np.zeros(len(X)), 1, 1.0, 4, CONST, c_lower=1.0, c_upper=2.0)
    assert not rep.verdict
    assert rep.witnesses[0]["check"] == "bound"


def test_certificate_unstable_dini_witness():
    V = make_functional("quadratic", grow1)
    rep = verify_certificate(grow1, V, 2, 1.0, 4, CONST, c=2.0)
    assert not rep.verdict and rep.max_dini_violation > 0
    assert any(w["check"] == "dini" and w["quotient"] > 0 for w in rep.witnesses)


def test_custom_registry():
    register_functional("abs", lambda model, scale=1.0: lambda X: scale * np.abs(X).sum(-1))
    V = make_functional("custom:abs", decay1, scale=2.0)
    assert V(np.array([[-1.5]]))[0] == 3.0
    with pytest.raises(ValueError):
        make_functional("custom:missing", decay1)


def test_family_condition_diagnostic():
    beta = FunctionTable((0.0, 1.0, 100.0), (0.0, 1.0, 100.0))
    out = family_condition(beta, 1.0, 1.0, [1, 10, 50], [0.5, 0.5, 0.5], [1, 1, 1])
    assert out["growing"] and out["diagnostic_only"]


@given(st.floats(0.1, 3.0), st.floats(1.0, 5.0))
@settings(max_examples=25, deadline=None)
def test_t_bar_identity(lam, M):
    p = LyapunovParams.from_decay(M, lam)
    assert math.isclose(p.t_bar, math.log(M) / (lam - p.gamma), rel_tol=1e-15, abs_tol=0)
