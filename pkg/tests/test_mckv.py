import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cannings_lab.coalescent import absorption_probs_exact
from cannings_lab.lambda_measure import LambdaMeasure
from cannings_lab.mckv import (MkvParams, equilibrium_moment, fv_step, sample_equilibrium,
                               sample_interaction_chain, simulate_mkv)
from cannings_lab.renorm import dk_flow

THETA = (0.3, 0.7)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(x.size)


def test_params_validation():
    with pytest.raises(ValueError):
        MkvParams(0.0, 0.1, LambdaMeasure(), THETA)
    with pytest.raises(ValueError):
        MkvParams(1.0, -0.1, LambdaMeasure(), THETA)
    with pytest.raises(ValueError):
        MkvParams(1.0, 0.1, LambdaMeasure(), (0.5, 0.6))
    p = MkvParams(2.0, 0.25, LambdaMeasure.point(0.5, 0.5), THETA)
    assert p.pair_rate == 1.0
    assert p.variance_factor() == pytest.approx(4 / 5)


# paths

def test_monotype_path_is_constant():
    p = MkvParams(1.0, 0.5, LambdaMeasure.point(0.5), (0.0, 1.0))
    path = simulate_mkv(p, [0.0, 1.0], 2.0, dt=1e-2, reps=20, times=[1.0, 2.0], rng=1)
    assert np.all(path.states[..., 1] == 1.0)


def test_deterministic_relaxation():
    p = MkvParams(1.5, 0.0, LambdaMeasure(), THETA)
    path = simulate_mkv(p, [1.0, 0.0], 2.0, dt=1e-2, times=[0.5, 2.0], rng=2)
    want = 0.3 + 0.7 * np.exp(-1.5 * np.array([0.5, 2.0]))
    assert np.allclose(path.states[0, :, 0], want, rtol=1e-12)


def test_long_run_mean_pinned_to_theta():
    p = MkvParams(1.0, 0.3, LambdaMeasure.point(0.4, 0.5), THETA)
    Z = sample_equilibrium(p, reps=8000, rng=3, dt=2e-3)
    m, se = _mean_se(Z[:, 0])
    assert abs(m - 0.3) <= 3 * se


def test_long_run_variance_factor():
    p = MkvParams(1.0, 0.25, LambdaMeasure.point(0.5, 0.5), THETA)
    Z = sample_equilibrium(p, reps=8000, rng=4)
    m, se = _mean_se(Z[:, 0] * Z[:, 1])  # var_Z(psi) for psi = 1{type 0}
    assert abs(m - p.variance_factor() * 0.21) <= 3 * se


@pytest.mark.parametrize("z", [0.5, 0.01, 0.0005])
def test_fv_step_moments(z):
    # one step: mean kept, covariance var_dt z(1-z), never off the simplex
    var_dt = 1e-3
    Z = np.tile([z, 1 - z], (200000, 1))
    fv_step(Z, var_dt, np.random.default_rng(12))
    assert Z.min() >= 0 and np.allclose(Z.sum(axis=1), 1.0)
    m, se = _mean_se(Z[:, 0])
    assert abs(m - z) <= 3 * se
    v, vse = _mean_se((Z[:, 0] - z) ** 2)
    assert abs(v - var_dt * z * (1 - z)) <= 3 * vse
    with pytest.raises(ValueError):
        fv_step(Z, 1.0, np.random.default_rng(0))


def test_variance_factor_near_a_face():
    # theta close to a face: clipping would inflate E[z] and the variance
    p = MkvParams(1.0, 1 / 3, LambdaMeasure.point(0.5, 1.0), (0.01, 0.99))
    Z = sample_equilibrium(p, reps=10000, rng=13, burn_in=6.0)
    m, se = _mean_se(Z[:, 0] * Z[:, 1])
    assert abs(m - p.variance_factor() * 0.0099) <= 3 * se


# equilibrium moments

def test_moment_examples():
    p = MkvParams(1.0, 0.25, LambdaMeasure.point(0.5, 0.5), THETA)
    phi = np.array([2.0, -1.0])
    t1 = THETA @ phi
    assert equilibrium_moment(p, phi, 1) == pytest.approx(t1, rel=1e-14)
    P21 = p.pair_rate / (p.pair_rate + 2 * p.c)
    want = (1 - P21) * t1 ** 2 + P21 * (THETA @ phi ** 2)
    assert equilibrium_moment(p, phi, 2) == pytest.approx(want, rel=1e-13)
    q = MkvParams(1.0, 0.4, LambdaMeasure(), THETA)
    for n in range(1, 7):
        assert equilibrium_moment(q, [1.0, 1.0], n) == pytest.approx(1.0, rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_indicator_moment_matches_absorption(n):
    lam = LambdaMeasure(0.0, ((0.5, 0.7), (0.2, 0.4)))
    p = MkvParams(0.8, 0.3, lam, THETA)
    P = absorption_probs_exact(n, p.c, lam, d=p.d)
    want = sum(P[k - 1] * 0.3 ** k for k in range(1, n + 1))
    assert equilibrium_moment(p, [1.0, 0.0], n) == pytest.approx(want, rel=1e-12)


@given(st.floats(0.1, 5.0), st.floats(0.0, 3.0), st.floats(0.05, 0.95), st.floats(0.0, 3.0),
       st.floats(0.01, 0.99), st.floats(-3, 3), st.floats(-3, 3))
def test_variance_of_evaluation_identity(c, d, r, m, th, f0, f1):
    lam = LambdaMeasure(0.0, ((r, m),)) if m > 0 else LambdaMeasure()
    p = MkvParams(c, d, lam, (th, 1 - th))
    phi = np.array([f0, f1])
    var_theta = th * (1 - th) * (f0 - f1) ** 2
    dprime = p.pair_rate * c / (2 * c + p.pair_rate)
    got = equilibrium_moment(p, phi, 2) - (p.theta @ phi) ** 2
    assert got == pytest.approx(dprime / c * var_theta, rel=1e-10, abs=1e-12)


def test_mixed_moments():
    p = MkvParams(1.2, 0.2, LambdaMeasure.point(0.6, 0.8), (0.2, 0.5, 0.3))
    f = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, 0.1, 2.0])
    assert equilibrium_moment(p, [f, f, f], 3) == pytest.approx(equilibrium_moment(p, f, 3), rel=1e-13)
    assert equilibrium_moment(p, [f, g], 2) == pytest.approx(equilibrium_moment(p, [g, f], 2), rel=1e-13)
    # bilinearity in one slot
    lhs = equilibrium_moment(p, [f + 2 * g, g, f], 3)
    rhs = equilibrium_moment(p, [f, g, f], 3) + 2 * equilibrium_moment(p, [g, g, f], 3)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    with pytest.raises(ValueError):
        equilibrium_moment(p, f, 7)


# samplers

def test_stick_breaking_requires_fleming_viot():
    p = MkvParams(1.0, 0.3, LambdaMeasure.point(0.5), THETA)
    with pytest.raises(ValueError, match="not known"):
        sample_equilibrium(p, "stick-breaking")


def test_stick_breaking_second_moment():
    p = MkvParams(1.0, 0.4, LambdaMeasure(), THETA)
    Z = sample_equilibrium(p, "stick-breaking", reps=100000, rng=5)
    assert np.allclose(Z.sum(axis=1), 1.0)
    phi = np.array([1.0, -0.5])
    m, se = _mean_se((Z @ phi) ** 2)
    assert abs(m - equilibrium_moment(p, phi, 2)) <= 3 * se


def test_stick_breaking_concentrates_for_small_d():
    p = MkvParams(1.0, 1e-2, LambdaMeasure(), THETA)
    Z = sample_equilibrium(p, "stick-breaking", reps=2000, rng=6)
    assert np.mean((Z[:, 0] - 0.3) ** 2) < 0.02 * 0.21


def test_long_run_agrees_with_stick_breaking():
    p = MkvParams(1.0, 0.5, LambdaMeasure(), THETA)
    a = sample_equilibrium(p, "long-run", reps=20000, rng=7, dt=2e-3)[:, 0]
    b = sample_equilibrium(p, "stick-breaking", reps=20000, rng=8)[:, 0]
    for fa, fb in ((a, b), (a ** 2, b ** 2)):
        (ma, sa), (mb, sb) = _mean_se(fa), _mean_se(fb)
        assert abs(ma - mb) <= 3 * math.hypot(sa, sb)


# interaction chain

def test_chain_shape_and_start():
    flow = dk_flow(1.0, 0.5, k_max=3)
    s = sample_interaction_chain(2, [1.0] * 3, [LambdaMeasure.point(0.5)] * 3, flow.d, THETA, 50, rng=9)
    assert s.states.shape == (50, 4, 2)
    assert np.all(s.states[:, 0] == THETA)
    with pytest.raises(ValueError, match="shorter"):
        sample_interaction_chain(3, [1.0] * 3, [LambdaMeasure()] * 3, flow.d, THETA, 5)


def test_chain_mean_pinning():
    flow = dk_flow(1.0, 0.5, k_max=3)
    s = sample_interaction_chain(2, [1.0] * 3, [LambdaMeasure.point(0.5)] * 3, flow.d, THETA, 4000, rng=10)
    mean, se = s.mean([1.0, 0.0])
    assert np.all(np.abs(mean - 0.3) <= 3 * se + 1e-12)


def test_chain_huge_m0_is_nearly_monotype():
    lams = [LambdaMeasure.point(0.9, 400.0)]
    flow = dk_flow(0.1, 200.0, k_max=1)
    s = sample_interaction_chain(0, [0.1], lams, flow.d, THETA, 500, rng=11, burn_in=5.0)
    ev, _ = s.expected_variance([1.0, 0.0])
    assert ev[-1] < 0.01 * 0.21
