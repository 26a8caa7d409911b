import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import gaussian_expectation
from scipy.stats import norm
from sklearn.exceptions import NotFittedError

from smoothquad.hierarchy import PathGrid
from smoothquad.models import GbmSpec, HestonSpec
from smoothquad.payoffs import make_call, make_constant, make_digital, root_function
from smoothquad.smoothing import (NumericalSmoother, SmoothingConfig, SmoothedIntegrand, find_all_roots,
                                  find_root, preintegrate, smooth)

CFG = SmoothingConfig()
FINE = SmoothingConfig(m_lag=128)
SMOOTH_TAILS = SmoothingConfig(m_lag=64)


def test_find_root_identity():
    r = find_root(lambda y: y, lambda y: 1.0)
    assert r.roots.tolist() == [0.0]
    assert r.newton_iters[0] <= 1


def test_find_root_linear():
    r = find_root(lambda y: 100 * (1 + 0.4 * y) - 110, lambda y: 40.0)
    assert abs(r.roots[0] - 0.25) <= 1e-10
    assert r.residuals[0] <= CFG.tol_newton


def test_find_root_none():
    r = find_root(lambda y: np.exp(y) + 1, lambda y: np.exp(y))
    assert len(r) == 0


def test_find_root_falls_back_when_newton_leaves_bracket():
    # atan has a huge Newton overshoot from far away
    f = lambda y: np.arctan(y - 3.0)
    r = find_root(f, lambda y: 1 / (1 + (y - 3.0) ** 2))
    assert r.roots[0] == pytest.approx(3.0, abs=1e-9)


def test_find_all_roots_quadratic():
    r = find_all_roots(lambda y: y**2 - 1)
    np.testing.assert_allclose(r.roots, [-1, 1], atol=1e-9)


def test_find_all_roots_linear():
    np.testing.assert_allclose(find_all_roots(lambda y: y).roots, [0.0], atol=1e-12)


def test_find_all_roots_cubic_sorted():
    r = find_all_roots(lambda y: (y**2 - 4) * y)
    np.testing.assert_allclose(r.roots, [-2, 0, 2], atol=1e-9)
    assert np.all(np.diff(r.roots) > 0)
    assert np.all(r.residuals <= CFG.tol_newton)


@pytest.mark.parametrize("root", [-2.5, 0.0, 0.37, 3.0])
def test_preintegrate_constant(root):
    assert abs(preintegrate(lambda y: 1.0, np.array([root]), FINE) - 1.0) < 1e-13


def test_preintegrate_half_mass():
    assert abs(preintegrate(lambda y: float(y >= 0), np.array([0.0]), FINE) - 0.5) < 1e-13


def test_default_tail_rule_accuracy():
    # the Gaussian tail is not polynomial times exp(-u): 32 nodes give ~1e-8
    err = abs(preintegrate(lambda y: 1.0, np.array([0.37])) - 1.0)
    assert 1e-13 < err < 1e-7


@pytest.mark.parametrize("root", [-4.0, -2.0, 3.0])
def test_tail_scaling_helps_off_centre_roots(root):
    plain = abs(preintegrate(lambda y: 1.0, np.array([root]), SmoothingConfig(scale_tails=False)) - 1.0)
    scaled = abs(preintegrate(lambda y: 1.0, np.array([root])) - 1.0)
    assert scaled < 1e-10 and scaled < plain


def test_preintegrate_no_root_uses_hermite():
    assert preintegrate(lambda y: y * y, np.array([])) == pytest.approx(1.0, abs=1e-12)


def test_preintegrate_single_step_call_vs_simpson():
    G = lambda y: max(100 * (1 + 0.4 * y) - 100, 0.0)
    ref = gaussian_expectation(G, breaks=[0.0], lo=0.0, hi=12.0)
    assert abs(preintegrate(G, np.array([0.0]), SMOOTH_TAILS) - ref) < 1e-8
    assert ref == pytest.approx(40 / math.sqrt(2 * math.pi), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3))
def test_preintegrate_shifted_indicator(r, s):
    # 1{y >= r} * exp(s y) has a closed form
    # nodes far out in the tail carry zero weight; cap to avoid overflow there
    G = lambda y: math.exp(min(s * y, 700.0)) if y >= r else 0.0
    exact = math.exp(0.5 * s * s) * norm.sf(r - s)
    assert preintegrate(G, np.array([r]), FINE) == pytest.approx(exact, rel=1e-8)


def test_smoothed_single_step_digital_and_call():
    # one Euler step: S = 100 (1 + 0.4 y); the discrete problem is exactly solvable
    model, grid = GbmSpec([100.0], [0.4]), PathGrid(1)
    dig = SmoothedIntegrand(make_digital(100), model, grid, SmoothingConfig(m_lag=32))
    assert dig.dim == 0
    assert dig(np.zeros((1, 0)))[0] == pytest.approx(0.5, abs=1e-4)
    assert SmoothedIntegrand(make_digital(100), model, grid, FINE)(np.zeros((1, 0)))[0] == \
        pytest.approx(0.5, abs=1e-13)
    call = smooth(make_call(100), model, grid, SmoothingConfig(m_lag=64))
    assert call(np.zeros((1, 0)))[0] == pytest.approx(40 / math.sqrt(2 * math.pi), abs=1e-8)


@pytest.mark.parametrize("payoff", [make_call(100), make_call(120), make_digital(95)])
def test_smoothed_at_zero_rest_vs_simpson(payoff):
    model, grid = GbmSpec([100.0], [0.4]), PathGrid(4)
    rest = np.zeros((1, 3))
    P, _ = root_function(payoff, model, grid, rest)
    Pf = lambda y: float(P(np.array([y]))[0])
    roots = find_all_roots(lambda y: P(np.atleast_1d(y)) if np.ndim(y) else Pf(y)).roots
    G = lambda y: float(payoff.from_phi(np.array(Pf(y))))
    ref = gaussian_expectation(G, breaks=list(roots))
    assert SmoothedIntegrand(payoff, model, grid, SMOOTH_TAILS)(rest)[0] == pytest.approx(ref, abs=1e-8)


def test_smoothed_heston_vs_simpson():
    model = HestonSpec(v0=0.04, rho=-0.9, kappa=1, theta=0.0025, xi=0.1, scheme="ou_based")
    grid = PathGrid(4)
    rest = np.random.default_rng(3).standard_normal((1, 7)) * 0.5
    payoff = make_call(100)
    P, _ = root_function(payoff, model, grid, rest)
    Pf = lambda y: float(P(np.array([y]))[0])
    root = find_root(Pf, lambda y: (Pf(y + 1e-6) - Pf(y - 1e-6)) / 2e-6).roots
    ref = gaussian_expectation(lambda y: max(Pf(y), 0.0), breaks=list(root))
    # sqrt(Y) = |X| puts kinks in P wherever an OU factor crosses zero, so the
    # tail rule stalls around 1e-8 relative instead of converging spectrally
    assert SmoothedIntegrand(payoff, model, grid, SMOOTH_TAILS)(rest)[0] == pytest.approx(ref, rel=1e-6)


def test_smoothed_batch_equals_rows():
    f = SmoothedIntegrand(make_digital(100), GbmSpec([100.0], [0.4]), PathGrid(8))
    z = np.random.default_rng(4).standard_normal((6, 7))
    batch = f(z)
    np.testing.assert_allclose(batch, [f(row) for row in z], rtol=1e-13)
    assert f.diagnostics.n_points == 12


def test_smooth_requires_monotone_coordinate():
    with pytest.raises(ValueError):
        SmoothedIntegrand(make_constant(), GbmSpec([100.0], [0.4]), PathGrid(2))


def test_config_validation():
    with pytest.raises(ValueError):
        SmoothingConfig(m_lag=0)
    with pytest.raises(ValueError):
        SmoothingConfig(tol_newton=-1.0)


def test_numerical_smoother_api():
    sm = NumericalSmoother(n_steps=4)
    assert sm.get_params()["n_steps"] == 4
    with pytest.raises(NotFittedError):
        sm.transform(np.zeros((1, 3)))
    sm.fit(GbmSpec([100.0], [0.4]), make_call(100))
    z = np.random.default_rng(5).standard_normal((3, 4))
    np.testing.assert_allclose(sm.transform(z), sm.transform(z[:, 1:]))
    assert sm.set_params(m_lag=16).m_lag == 16
