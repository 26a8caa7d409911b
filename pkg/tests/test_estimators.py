import math

import numpy as np
import pytest
from scipy.stats import norm
from sklearn.base import clone

from oracles import gaussian_expectation
from smoothquad.estimators import (AsgqConfig, Method, PricingPlan, SmoothingPricer, WorkModelParams,
                                   error_decomposition, price, richardson, work_advisor)
from smoothquad.hierarchy import PathGrid
from smoothquad.models import GbmSpec, HestonSpec
from smoothquad.payoffs import make_basket_call, make_call, make_constant, make_digital
from smoothquad.reference import bs_call
from smoothquad.sampling import ConfigError, Estimate, LatticeConfig, McConfig
from smoothquad.smoothing import SmoothingConfig

GBM = GbmSpec([100.0], [0.4])
CALL_REF = 15.8519


def euler_call_two_steps(s0=100.0, k=100.0, sigma=0.4):
    # S_2 = s0 (1 + c Z1)(1 + c Z2); the inner expectation over Z2 is Gaussian in closed form
    c = sigma * math.sqrt(0.5)

    def inner(z1):
        a = s0 * (1 + c * z1)
        m, sd = a - k, abs(a) * c
        if sd == 0.0:
            return max(m, 0.0)
        d = m / sd
        return m * norm.cdf(d) + sd * norm.pdf(d)

    return gaussian_expectation(inner, breaks=(-1 / c,), tol=1e-12)


def test_asgq_smoothed_call_two_steps():
    est = price(PricingPlan(GBM, make_call(100), PathGrid(2), method_config=AsgqConfig(300)))
    assert est.value == pytest.approx(euler_call_two_steps(), rel=1e-6)
    assert est.method == "asgq-smoothed" and est.work > 0


@pytest.mark.slow
def test_mc_raw_digital_fine_grid():
    plan = PricingPlan(GBM, make_digital(100), PathGrid(512), Method.MC, smoothed=False,
                       method_config=McConfig(10**6, seed=2024))
    est = price(plan)
    assert abs(est.value - 0.42074) <= est.stat_error


@pytest.mark.parametrize("method,cfg", [(Method.ASGQ, AsgqConfig(50)), (Method.RQMC, LatticeConfig(64, 4)),
                                        (Method.MC, McConfig(200))])
def test_constant_payoff_any_method(method, cfg):
    plan = PricingPlan(GBM, make_constant(3.0), PathGrid(4), method, smoothed=False, method_config=cfg)
    assert price(plan).value == pytest.approx(3.0, rel=1e-14)


def test_plan_validation():
    with pytest.raises(ConfigError):
        PricingPlan(GBM, make_constant(), PathGrid(4))
    with pytest.raises(ConfigError):
        PricingPlan(GBM, make_call(100), PathGrid(4), Method.RQMC, method_config=McConfig(10))
    with pytest.raises(ConfigError):
        PricingPlan(GBM, make_call(100), PathGrid(3), richardson_level=1)
    with pytest.raises(ConfigError):
        PricingPlan(GBM, make_call(100), PathGrid(4, d=2))


def test_richardson_cancels_affine_bias():
    a, b = 1.25, 3.0
    stub = lambda plan: Estimate(a + b * plan.grid.dt, 0.0, 1)
    est = richardson(PricingPlan(GBM, make_call(100), PathGrid(8)), leg=stub)
    assert est.value == pytest.approx(a, abs=1e-14)
    assert est.work == 2


def test_richardson_reduces_call_bias():
    cfg = AsgqConfig(2000)
    plain = price(PricingPlan(GBM, make_call(100), PathGrid(8), method_config=cfg)).value
    extra = price(PricingPlan(GBM, make_call(100), PathGrid(8), method_config=cfg, richardson_level=1)).value
    assert abs(extra - CALL_REF) < abs(plain - CALL_REF)


def test_richardson_coupled_mc_variance_bound():
    plan = PricingPlan(GBM, make_call(100), PathGrid(8), Method.MC, smoothed=False,
                       method_config=McConfig(20000, seed=9), richardson_level=1)
    est = price(plan)
    var = est.info["variance"]
    assert var <= 4 * max(est.info["leg_variances"])
    # coupling through the shared Brownian path keeps the difference close to one leg's noise
    assert var < 2 * max(est.info["leg_variances"])


def test_richardson_threads_match_serial():
    plan = PricingPlan(GBM, make_digital(100), PathGrid(4), method_config=AsgqConfig(200), richardson_level=1)
    assert richardson(plan, n_jobs=2).value == richardson(plan).value


def test_error_decomposition_bias_rate():
    stub = lambda plan: 2.0 + 0.7 * plan.grid.dt + 0.3 * plan.grid.dt ** 2
    Ns = [4, 8, 16, 32]
    biases = [error_decomposition(PricingPlan(GBM, make_call(100), PathGrid(N), smoothed=False), 2.0,
                                  pricer=stub).bias for N in Ns]
    # one refinement removes the first-order term exactly and leaves 3/2 of the second
    for N, b in zip(Ns, biases):
        assert b == pytest.approx(0.7 / N + 0.45 / N**2, rel=1e-12)
    slope = np.polyfit(np.log([1 / N for N in Ns]), np.log(np.abs(biases)), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_error_decomposition_total_matches_euler():
    plan = PricingPlan(GBM, make_call(100), PathGrid(2), method_config=AsgqConfig(300))
    dec = error_decomposition(plan, bs_call(100, 100, 0.4))
    assert dec.total == pytest.approx(euler_call_two_steps() - bs_call(100, 100, 0.4), rel=1e-4)


def test_error_decomposition_smoothing_part():
    plan = PricingPlan(GBM, make_call(100), PathGrid(4), smoothing=SmoothingConfig(m_lag=64),
                       method_config=AsgqConfig(300))
    assert abs(error_decomposition(plan, CALL_REF).smoothing) < 1e-8


def test_error_decomposition_exact_stub():
    stub = lambda plan: 2.0 + 0.5 * plan.grid.dt
    dec = error_decomposition(PricingPlan(GBM, make_call(100), PathGrid(4), smoothed=False), 2.0, pricer=stub)
    assert abs(dec.quadrature) < 1e-12
    assert dec.bias + dec.smoothing + dec.quadrature == pytest.approx(dec.total, abs=1e-15)


def test_work_advisor_limits():
    adv = work_advisor(WorkModelParams(1e8, 1e8, 1e-3))
    assert adv.dt_exponent == pytest.approx(1.0, abs=1e-6)
    assert adv.advisory


def test_work_advisor_four():
    adv = work_advisor(WorkModelParams(4, 4, 1e-2))
    assert adv.dt_exponent == pytest.approx(3.0, abs=1e-14)
    # the closed form of the work exponent
    p = s = 4
    assert adv.work_exponent == pytest.approx(-1 - 2 * (p + s) / (p * s - p - s) - 1 / p - 1 / s, abs=1e-12)


def test_work_advisor_domain():
    with pytest.raises(ValueError):
        WorkModelParams(2, 2, 1e-2)


def test_pricer_api():
    est = SmoothingPricer(n_steps=4, budget=300)
    params = est.get_params()
    assert params["n_steps"] == 4 and params["budget"] == 300
    twin = clone(est).set_params(method="rqmc", n_samples=64, n_shifts=4)
    assert twin.method == "rqmc" and est.method == "asgq"
    est.fit(GBM, make_call(100))
    assert est.relative_error(CALL_REF) < 0.05 and est.work_ <= 300
    rq = twin.fit(GBM, make_call(100))
    assert rq.estimate_.method == "rqmc-smoothed"


def test_basket_plan_runs():
    model = GbmSpec.equicorrelated([100.0] * 4, [0.4] * 4, 0.3)
    est = price(PricingPlan(model, make_basket_call([0.25] * 4, 100), PathGrid(2, d=4),
                            method_config=AsgqConfig(200)))
    assert 9.0 < est.value < 13.0


def test_heston_richardson_runs():
    model = HestonSpec(v0=0.04, rho=-0.9, kappa=1, theta=0.0025, xi=0.1, scheme="ou_based")
    est = price(PricingPlan(model, make_call(100), PathGrid(4), method_config=AsgqConfig(200), richardson_level=1))
    assert est.method.startswith("richardson") and est.work <= 400
