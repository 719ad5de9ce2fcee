import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.ndimage import maximum_filter1d
from scipy.special import lambertw

from expostab.dynsys import SwitchingSignal, evolve, random_signal_ensemble
from expostab.models import (
    DelayModelConfig,
    SemilinearModelConfig,
    WaveModelConfig,
    build_delay,
    build_linear_switched,
    build_semilinear,
    build_wave,
    build_wave_semilinear,
    common_lyapunov_matrix,
    constant_history,
    energy,
    model_from_dict,
    parse_damping,
    wave_operators,
)


def smooth_wave_state(n, seed=0):
    x = np.linspace(0, 1, n + 2)[1:-1]
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=3), rng.normal(size=3)
    disp = sum(a[k] * np.sin((k + 1) * np.pi * x) for k in range(3))
    vel = sum(b[k] * np.sin((k + 1) * np.pi * x) for k in range(3))
    return np.concatenate([disp, vel])


# -- wave ------------------------------------------------------------------


def test_wave_structure():
    model = build_wave(WaveModelConfig(4, ["linear:0"], sector_check="off"))
    A, P, lap, h = wave_operators(4)
    assert model.state_dim == 8
    assert np.array_equal(model.generator_of(0), A)
    assert np.allclose(lap, (np.diag([-2.0] * 4) + np.diag([1.0] * 3, 1) + np.diag([1.0] * 3, -1)) * 25)
    # A is skew-adjoint for the energy inner product
    assert np.allclose(P @ A + A.T @ P, 0, atol=1e-9)


def test_wave_energy_of_zero_and_pure_velocity():
    model = build_wave(WaveModelConfig(8, ["linear:1"], alpha=1.0))
    assert energy(model, np.zeros(16)) == 0
    v = np.random.default_rng(1).normal(size=8)
    x = np.concatenate([np.zeros(8), v])
    assert math.isclose(energy(model, x), model.meta["h"] * v @ v, rel_tol=1e-12)


def test_energy_matches_norm_squared():
    model = build_wave(WaveModelConfig(8, ["atan:1"], alpha=0.1, sector_check="local"))
    for x in np.random.default_rng(2).normal(size=(20, 16)):
        assert abs(energy(model, x) - model.norm(x) ** 2) <= 1e-12 * max(1.0, energy(model, x))


def test_undamped_wave_conserves_energy():
    model = build_wave(WaveModelConfig(32, ["linear:0"], sector_check="off"))
    x0 = smooth_wave_state(32)
    traj = evolve(model, x0, SwitchingSignal.constant(0), 10.0, 0.01)
    E = energy(model, traj.states)
    assert np.max(np.abs(E - E[0])) <= 1e-6 * E[0]


@pytest.mark.parametrize("dampings, check", [(["linear:0.5", "linear:2"], "strict"), (["atan:1", "linear:0.7"], "local")])
def test_damped_wave_energy_nonincreasing(dampings, check):
    model = build_wave(WaveModelConfig(16, dampings, alpha=0.5, sector_check=check, probe_radius=2.0))
    x0 = smooth_wave_state(16, 3)
    for s in random_signal_ensemble([0, 1], 0.1, 1.0, 5.0, 4, seed=5):
        E = energy(model, evolve(model, x0, s, 5.0, 0.005).states)
        assert np.all(np.diff(E) <= 1e-9 * E[0])


def test_sector_violation_reports_mode_and_value():
    with pytest.raises(ValueError, match=r"damping 1 .*v=2\.01"):
        build_wave(WaveModelConfig(4, ["linear:1", "sat:1"], alpha=0.5, probe_radius=10))
    model = build_wave(WaveModelConfig(4, ["linear:1", "sat:1"], alpha=0.5, sector_check="local", probe_radius=10))
    assert model.meta["sector_radius"][0] == 10
    assert 1.9 < model.meta["sector_radius"][1] <= 2.0


def test_damping_presets():
    v = np.array([-3.0, 0.0, 0.5, 4.0])
    assert np.allclose(parse_damping("linear:2")(v), 2 * v)
    assert np.allclose(parse_damping("sat:1")(v), [-1, 0, 0.5, 1])
    assert np.allclose(parse_damping("atan:2")(v), 2 * np.arctan(v / 2))
    with pytest.raises(ValueError):
        parse_damping("cubic:1")


# -- delay -----------------------------------------------------------------


def scalar_delay(tau, r=None, m=10):
    r = tau if r is None else r
    return build_delay(DelayModelConfig([[[0.0]]], [[[-1.0]]], [tau], r, m))


def test_zero_history_gives_zero_trajectory():
    model = scalar_delay(0.5)
    traj = evolve(model, np.zeros(11), SwitchingSignal.constant(0), 3.0, 0.01)
    assert np.all(traj.states == 0)


def test_delay_step_must_divide_history_spacing():
    model = scalar_delay(0.5)
    with pytest.raises(ValueError, match="r/m"):
        evolve(model, np.ones(11), SwitchingSignal.constant(0), 1.0, 0.03)


def test_delay_first_interval_closed_form():
    # x = 1 on [-tau, 0] gives x(t) = 1 - t on [0, tau]
    model = scalar_delay(0.5)
    traj = evolve(model, constant_history(model, 1.0), SwitchingSignal.constant(0), 0.5, 0.005)
    assert np.allclose(traj.states[-1], 1 - 0.05 * np.arange(11), atol=1e-12)


def test_delay_second_order_convergence():
    model = scalar_delay(0.5)
    x0 = constant_history(model, 1.0)
    s = SwitchingSignal.constant(0)
    end = lambda dt: evolve(model, x0, s, 3.0, dt).states[-1, -1]
    ref = end(0.05 / 64)
    e1, e2 = abs(end(0.05 / 4) - ref), abs(end(0.05 / 8) - ref)
    assert e1 / e2 > 3.5


@pytest.mark.parametrize("tau", [0.5, 2.0])
def test_delay_growth_rate_matches_characteristic_root(tau):
    # rightmost root of s + exp(-s tau) = 0
    root = lambertw(-tau, 0) / tau
    model = scalar_delay(tau, m=20)
    dt = tau / 20 / 10
    T = 30.0
    traj = evolve(model, constant_history(model, 1.0), SwitchingSignal.constant(0), T, dt)
    nrm = model.norm(traj.states)
    tail = traj.times > T / 2
    # windowed max over one oscillation period removes the zeros of the oscillation
    window = int(2 * np.pi / abs(root.imag) / dt) + 1
    env = maximum_filter1d(nrm, window)
    slope = np.polyfit(traj.times[tail], np.log(env[tail]), 1)[0]
    assert abs(slope - root.real) < 0.03
    assert (slope < 0) == (tau < math.pi / 2)


def test_delay_lipschitz_probe():
    cfg = DelayModelConfig(
        [[[-1.0, 0.3], [0.2, -0.5]], [[0.0, 1.0], [-1.0, 0.0]]],
        [[[0.1, 0.0], [0.4, -0.2]], [[-0.5, 0.1], [0.0, 0.3]]],
        [0.3, 0.7], 1.0, 10,
    )
    model = build_delay(cfg)
    rng = np.random.default_rng(0)
    for q in model.modes:
        L = model.lipschitz_bound(q)
        for _ in range(200):
            p1, p2 = rng.normal(size=(2, model.state_dim))
            lhs = np.linalg.norm(model.rhs(q, p1) - model.rhs(q, p2))
            assert lhs <= L * model.norm(p1 - p2) * (1 + 1e-12)


def test_delay_config_validation():
    with pytest.raises(ValueError):
        DelayModelConfig([[[0.0]]], [[[-1.0]]], [2.0], 1.0, 10)
    with pytest.raises(ValueError):
        DelayModelConfig([[[0.0]]], [[[-1.0]]], [0.5], 1.0, 1)


# -- linear switched -------------------------------------------------------


def test_linear_switched_examples():
    m = build_linear_switched([[[-1.0]]])
    assert m.state_dim == 1 and m.modes == (0,)
    two = build_linear_switched([[[-1.0]], [[-2.0]]])
    assert two.modes == (0, 1)
    with pytest.raises(ValueError):
        build_linear_switched([np.eye(2), np.eye(3)])


def test_common_lyapunov_matrix_oracle():
    pytest.importorskip("cvxpy")
    A1 = np.array([[-1.0, 2.0], [0.0, -1.0]])
    A2 = np.array([[-1.0, 0.0], [1.0, -2.0]])
    P = common_lyapunov_matrix([A1, A2])
    assert P is not None
    for A in (A1, A2):
        assert np.linalg.eigvalsh(A.T @ P + P @ A).max() < 0
    assert common_lyapunov_matrix([np.array([[0.5, 0.0], [0.0, -1.0]])]) is None


# -- semilinear ------------------------------------------------------------


def test_wave_semilinear_closed_loop_matches_damped_wave():
    cfg = WaveModelConfig(8, ["linear:0.5", "linear:1.5"], alpha=0.5)
    sl = build_wave_semilinear(cfg)
    direct = build_wave(cfg)
    x0 = smooth_wave_state(8, 4)
    s = SwitchingSignal((0.0, 0.7, 1.3), (0, 1, 0))
    a = evolve(sl.closed_loop, x0, s, 3.0, 0.001).states[-1]
    b = evolve(direct, x0, s, 3.0, 0.001).states[-1]
    assert np.allclose(a, b, atol=1e-8)
    assert sl.group_bound_violation() <= 1 + 1e-9
    assert sl.L_f == 1.5 and sl.L_K == 1.0


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_semilinear_group_bound_from_log_norms(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    model = build_semilinear(SemilinearModelConfig(A=A, B=[rng.normal(size=(3, 1))], K=rng.normal(size=(1, 3))))
    for t in rng.uniform(-3, 3, 64):
        assert np.linalg.norm(expm(A * t), 2) <= model.Gamma * math.exp(model.omega * abs(t)) * (1 + 1e-9)


def test_semilinear_rejects_nonzero_at_origin():
    from expostab.models import SemilinearModel

    with pytest.raises(ValueError):
        SemilinearModel(np.zeros((1, 1)), {0: lambda X, U: X + U + 1}, 1)
    with pytest.raises(ValueError):
        SemilinearModel(np.zeros((1, 1)), {0: lambda X, U: U}, 1, feedback=lambda X: X + 1)


def test_model_from_dict_kinds():
    assert model_from_dict({"kind": "linear_switched", "matrices": [[[-1.0]]]}).state_dim == 1
    assert model_from_dict({"kind": "wave", "n": 4, "dampings": ["linear:1"]}).state_dim == 8
    d = model_from_dict({"kind": "delay", "A": [[[0.0]]], "B": [[[-1.0]]], "tau": [0.5], "r": 0.5, "m": 5})
    assert d.state_dim == 6
    s = model_from_dict({"kind": "semilinear", "A": [[0.0]], "B": [[[1.0]]], "K": [[-1.0]]})
    assert s.closed_loop.state_dim == 1
    with pytest.raises(ValueError, match="unknown model keys"):
        model_from_dict({"kind": "wave", "n": 4, "dampings": ["linear:1"], "bogus": 1})
    with pytest.raises(ValueError):
        model_from_dict({"kind": "kdv"})
