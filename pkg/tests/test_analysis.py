import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expostab.analysis import (
    FunctionTable,
    alpha_from_beta,
    datko_check,
    decay_fit,
    decay_fit_radii,
    fit_decay,
    growth_bound,
    lp_integral,
    lp_tail_bound,
    sphere_samples,
)
from expostab.dynsys import SwitchingSignal, evolve, signal_ensemble
from expostab.models import build_linear_switched

decay1 = build_linear_switched([[[-1.0]]])
CONST = [SwitchingSignal.constant(0)]


# -- lp_integral ------------------------------------------------------------


def test_lp_integral_zero_state():
    assert lp_integral(evolve(decay1, [0.0], CONST[0], 5.0), 2, 5.0) == 0


@pytest.mark.parametrize("a, x0, p, expected", [(-1.0, 2.0, 2, 2.0), (-2.0, 1.0, 1, 0.5)])
def test_lp_integral_closed_form(a, x0, p, expected):
    model = build_linear_switched([[[a]]])
    traj = evolve(model, [x0], CONST[0], 40.0, 1e-3)
    assert abs(lp_integral(traj, p, 40.0) - expected) < 1e-6


def test_lp_integral_rejects_short_trajectory():
    traj = evolve(decay1, [1.0], CONST[0], 5.0)
    with pytest.raises(ValueError, match="shorter"):
        lp_integral(traj, 2, 10.0)


@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.floats(0.5, 4))
@settings(max_examples=30, deadline=None)
def test_lp_integral_homogeneous(c, p):
    model = build_linear_switched([[[-0.5, 1.0], [-1.0, -0.3]]])
    x0 = np.array([0.7, -0.2])
    s = SwitchingSignal.constant(0)
    base = lp_integral(evolve(model, x0, s, 8.0, 0.01), p)
    scaled = lp_integral(evolve(model, c * x0, s, 8.0, 0.01), p)
    assert math.isclose(scaled, abs(c) ** p * base, rel_tol=1e-9)


def test_lp_integral_monotone_in_horizon():
    traj = evolve(decay1, [1.0], CONST[0], 10.0, 0.01)
    vals = [lp_integral(traj, 2, T) for T in (1.0, 2.5, 5.0, 10.0)]
    assert vals == sorted(vals)


def test_tail_bound():
    assert lp_tail_bound(0.0, 2, None) == 0
    assert lp_tail_bound(1.0, 2, None) == math.inf
    assert lp_tail_bound(2.0, 2, 1.0) == 2.0


# -- datko ------------------------------------------------------------------


def test_datko_scalar_flat_k():
    rep = datko_check(decay1, 2, CONST, [0.5, 1, 2, 4], 4, 20.0)
    for _, k in rep.k_table:
        assert abs(k - 1 / math.sqrt(2)) < 0.01 / math.sqrt(2)
    assert rep.verdict == "UGES-consistent (sampled)"
    assert rep.finite


def test_datko_two_mode_scalar_worst_case_is_slow_mode():
    model = build_linear_switched([[[-1.0]], [[-2.0]]])
    ens = signal_ensemble([0, 1], 20.0, count=16, seed=1)
    rep = datko_check(model, 2, ens, [1.0, 2.0], 2, 20.0)
    assert all(abs(k - 1 / math.sqrt(2)) < 0.01 for _, k in rep.k_table)
    assert rep.verdict.startswith("UGES")


def test_datko_unstable_blows_up():
    grow = build_linear_switched([[[1.0]]])
    rep = datko_check(grow, 2, CONST, [1.0], 2, 40.0)
    assert rep.verdict == "not forward-bounded on samples"
    assert not rep.finite
    assert json.loads(rep.to_json())["blowup_time"] > 27


def test_datko_neutral_is_inconclusive():
    rep = datko_check(build_linear_switched([[[0.0]]]), 2, CONST, [1.0, 2.0], 2, 10.0)
    assert not rep.finite and rep.verdict == "inconclusive"
    assert json.loads(rep.to_json())["k_table"][0][1] is None


# -- decay fit --------------------------------------------------------------


def test_decay_fit_scalar():
    est = decay_fit(decay1, CONST, 1.0, 4, 10.0)
    assert abs(est.M - 1) < 0.05 and abs(est.lam - 1) < 0.05
    assert est.stable and est.residual < 1e-9


def test_decay_fit_neutral():
    est = decay_fit(build_linear_switched([[[0.0]]]), CONST, 1.0, 2, 10.0)
    assert abs(est.lam) < 1e-9 and not est.stable
    assert est.verdict.startswith("not exponentially stable")


def test_decay_fit_envelope_bound_holds():
    model = build_linear_switched([[[-1.0, 4.0], [0.0, -1.5]], [[-0.8, 0.0], [1.0, -1.2]]])
    ens = signal_ensemble([0, 1], 10.0, count=8, seed=2)
    est = decay_fit(model, ens, 1.0, 8, 10.0)
    assert np.all(est.curve <= est.M * np.exp(-est.lam * est.times) * (1 + 1e-12))


def test_decay_fit_slowest_mode_constant_signals():
    A = np.diag([-0.4, -1.3])
    model = build_linear_switched([A])
    est = decay_fit(model, CONST, 1.0, 8, 30.0)
    assert abs(est.lam - 0.4) < 0.04 and est.residual <= 0.05


def test_decay_fit_radii_common_rate():
    model = build_linear_switched([[[-1.0]], [[-3.0]]])
    ests = decay_fit_radii(model, signal_ensemble([0, 1], 10.0, count=8), [0.5, 1, 2], 2, 10.0)
    assert len({e.lam for e in ests}) == 1
    Ms = [e.M for e in ests]
    assert Ms == sorted(Ms) and Ms[0] >= 1


def test_fit_decay_rejects_nonpositive_curve():
    with pytest.raises(ValueError):
        fit_decay([0, 1, 2], [1.0, 0.0, 0.5], 1.0)


# -- growth bound and alpha ---------------------------------------------------


def test_growth_bound_stable_scalar():
    gb = growth_bound(decay1, 1.0, CONST, [0.5, 1.0, 2.0], 2)
    assert np.allclose(gb.beta.values, [0.5, 1.0, 2.0])
    assert np.allclose(gb.alpha.values, 2.0)
    assert gb.coarse_M == 1 and gb.coarse_lambda == 0


def test_growth_bound_unstable_scalar():
    gb = growth_bound(build_linear_switched([[[1.0]]]), 1.0, CONST, [1.0, 3.0], 2)
    assert np.allclose(gb.beta.values, [math.e, 3 * math.e], rtol=1e-10)


@pytest.mark.parametrize(
    "beta, alpha",
    [
        (lambda r: r, lambda r: 2 + 0 * r),
        (lambda r: 2 * r, lambda r: 3 + 0 * r),
        (lambda r: r**2, lambda r: 1 + r),
    ],
)
def test_alpha_from_beta_examples(beta, alpha):
    r = np.linspace(0.1, 2.0, 20)
    tab = alpha_from_beta(FunctionTable(tuple(r), tuple(beta(r))))
    assert np.allclose(tab.values[1:], alpha(r))
    assert math.isclose(tab.values[0], 1 + beta(r[0]) / r[0])
    assert tab.r[0] == 0


@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=12, unique=True), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_alpha_invariants_on_mixtures(radii, w):
    r = np.sort(np.array(radii))
    b = w * r + (1 - w) * r**2
    tab = alpha_from_beta(FunctionTable(tuple(r), tuple(b)))
    a = np.array(tab.values[1:])
    assert tab.is_nondecreasing and np.all(a >= 1)
    assert np.all(b <= r * a)


def test_alpha_rejects_nonmonotone():
    with pytest.raises(ValueError):
        alpha_from_beta(FunctionTable((0.5, 1.0, 2.0), (1.0, 0.5, 3.0)))


def test_sphere_samples_on_sphere_and_deterministic():
    model = build_linear_switched([np.eye(3)])
    X = sphere_samples(model, 2.5, 10, seed=4)
    assert X.shape == (13, 3)
    assert np.allclose(np.linalg.norm(X, axis=1), 2.5)
    assert np.array_equal(X, sphere_samples(model, 2.5, 10, seed=4))
