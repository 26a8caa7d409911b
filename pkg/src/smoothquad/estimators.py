"""End-to-end pricing: integrand construction, method dispatch, Richardson
extrapolation, error attribution and the work-parameter advisor."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator

from .hierarchy import PathGrid
from .payoffs import PayoffSpec
from .quadrature import MAX_POINTS, asgq
from .sampling import ConfigError, Estimate, LatticeConfig, McConfig, mc_estimate, rqmc_estimate
from .smoothing import RawIntegrand, SmoothedIntegrand, SmoothingConfig


class Method(str, Enum):
    ASGQ = "asgq"
    RQMC = "rqmc"
    MC = "mc"


@dataclass(frozen=True)
class AsgqConfig:
    budget: int = 1000
    tol: float = 0.0
    max_level: int = 9
    work_normalized: bool = False

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be positive")


_DEFAULT_METHOD_CONFIG = {
    Method.ASGQ: AsgqConfig(),
    Method.RQMC: LatticeConfig(2**10),
    Method.MC: McConfig(10**5),
}


@dataclass(frozen=True, eq=False)
class PricingPlan:
    """Everything needed to produce one price estimate.

    ``method_config`` must match ``method`` (:class:`AsgqConfig`,
    :class:`LatticeConfig` or :class:`McConfig`); ``None`` picks defaults.
    With ``richardson_level = 1`` the grid is the fine level and the coarse
    leg uses half as many steps.
    """

    model: object
    payoff: PayoffSpec
    grid: PathGrid
    method: Method = Method.ASGQ
    smoothed: bool = True
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    method_config: object = None
    richardson_level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method_config is None:
            object.__setattr__(self, "method_config", _DEFAULT_METHOD_CONFIG[self.method])
        expected = type(_DEFAULT_METHOD_CONFIG[self.method])
        if not isinstance(self.method_config, expected):
            raise ConfigError(f"{self.method.value} needs a {expected.__name__}, "
                              f"got {type(self.method_config).__name__}")
        if self.smoothed and self.payoff.monotone_coord is None:
            raise ConfigError(f"payoff {self.payoff.name!r} has no monotone coordinate; use smoothed=False")
        if self.richardson_level not in (0, 1):
            raise ConfigError("richardson_level must be 0 or 1")
        if self.richardson_level == 1 and self.grid.n_steps % 2:
            raise ConfigError("Richardson extrapolation needs an even number of fine steps")
        if self.grid.d != self.model.d:
            raise ConfigError(f"grid dimension {self.grid.d} does not match the model's {self.model.d}")

    def with_grid(self, n_steps: int) -> "PricingPlan":
        return replace(self, grid=PathGrid(n_steps, self.grid.T, self.grid.d), richardson_level=0)


class CountingIntegrand:
    """Wraps an integrand and counts the points it is evaluated at."""

    def __init__(self, f: Callable, dim: int):
        self.f = f
        self.dim = dim
        self.count = 0

    def __call__(self, z):
        z = np.atleast_2d(z)
        self.count += z.shape[0]
        return self.f(z)


def build_integrand(plan: PricingPlan) -> CountingIntegrand:
    """Smoothed integrand over ``dN - 1`` coordinates, or the raw payoff over ``dN``."""
    if plan.smoothed:
        f = SmoothedIntegrand(plan.payoff, plan.model, plan.grid, plan.smoothing)
    else:
        f = RawIntegrand(plan.payoff, plan.model, plan.grid)
    return CountingIntegrand(f, f.dim)


def _run(plan: PricingPlan, f: CountingIntegrand) -> Estimate:
    cfg = plan.method_config
    if plan.method is Method.ASGQ:
        value, state = asgq(f, f.dim, budget=cfg.budget, tol=cfg.tol, max_level=cfg.max_level,
                            work_normalized=cfg.work_normalized)
        return Estimate(value, state.front_error, f.count, "asgq",
                        info={"n_indices": len(state.index_set), "history": list(state.history),
                              "budget_exhausted": state.budget_exhausted, "converged": state.converged})
    if plan.method is Method.RQMC:
        est = rqmc_estimate(f, f.dim, cfg)
    else:
        est = mc_estimate(f, f.dim, cfg)
    est.work = f.count
    return est


def price(plan: PricingPlan) -> Estimate:
    """Price the plan; ``richardson_level = 1`` delegates to :func:`richardson`."""
    if plan.richardson_level == 1:
        return richardson(plan)
    f = build_integrand(plan)
    est = _run(plan, f)
    est.method = f"{est.method}-{'smoothed' if plan.smoothed else 'raw'}"
    est.info["n_steps"] = plan.grid.n_steps
    est.info["dim"] = f.dim
    return est


class _CoupledDifference:
    """``2 f_fine(z) - f_coarse(coarsen(z))`` with per-leg moment accumulators."""

    def __init__(self, fine: CountingIntegrand, coarse: CountingIntegrand, plan: PricingPlan, smoothed: bool):
        self.fine, self.coarse, self.plan, self.smoothed = fine, coarse, plan, smoothed
        self.dim = fine.dim
        self.sums = np.zeros((2, 2))

    def __call__(self, z):
        z = np.atleast_2d(z)
        full = np.concatenate([np.zeros((z.shape[0], 1)), z], axis=1) if self.smoothed else z
        zc = self.plan.model.coarsen(self.plan.grid, full)
        if self.smoothed:
            zc = zc[:, 1:]
        vf = self.fine(z)
        vc = self.coarse(zc)
        self.sums += [[vf.sum(), (vf * vf).sum()], [vc.sum(), (vc * vc).sum()]]
        return 2.0 * vf - vc


def richardson(plan: PricingPlan, leg: Callable[[PricingPlan], Estimate] | None = None,
               n_jobs: int = 1) -> Estimate:
    """Level-1 extrapolation ``2 Q(dt/2) - Q(dt)`` with ``plan.grid`` as the fine level.

    ASGQ legs run independently with the plan's budget each. MC and rQMC
    legs share their Gaussian inputs through bridge coarsening, which
    makes the difference much less noisy. ``leg`` replaces the per-leg
    pricer (useful for stubs); the legs are then independent calls.
    """
    N = plan.grid.n_steps
    if N % 2:
        raise ConfigError("Richardson extrapolation needs an even number of fine steps")
    fine_plan, coarse_plan = plan.with_grid(N), plan.with_grid(N // 2)
    if leg is not None or plan.method is Method.ASGQ:
        pricer = leg or price
        if n_jobs > 1:
            with ThreadPoolExecutor(2) as pool:
                qf, qc = pool.map(pricer, (fine_plan, coarse_plan))
        else:
            qf, qc = pricer(fine_plan), pricer(coarse_plan)
        value = 2.0 * qf.value - qc.value
        err = 2.0 * qf.stat_error + qc.stat_error
        return Estimate(value, err, qf.work + qc.work, f"richardson-{qf.method}",
                        info={"fine": qf, "coarse": qc})
    fine, coarse = build_integrand(fine_plan), build_integrand(coarse_plan)
    f = _CoupledDifference(fine, coarse, plan, plan.smoothed)
    est = rqmc_estimate(f, f.dim, plan.method_config) if plan.method is Method.RQMC \
        else mc_estimate(f, f.dim, plan.method_config)
    n = fine.count
    means = f.sums[:, 0] / n
    leg_var = np.maximum(f.sums[:, 1] / n - means**2, 0.0) * n / max(n - 1, 1)
    est.method = f"richardson-{plan.method.value}-{'smoothed' if plan.smoothed else 'raw'}"
    est.work = fine.count + coarse.count
    est.info.update({"fine_mean": float(means[0]), "coarse_mean": float(means[1]),
                     "leg_variances": leg_var.tolist()})
    return est


@dataclass(frozen=True)
class ErrorDecomposition:
    """Signed error parts; ``bias + smoothing + quadrature == total``."""

    bias: float
    smoothing: float
    quadrature: float
    total: float
    value: float

    def as_tuple(self):
        return self.bias, self.smoothing, self.quadrature


def error_decomposition(plan: PricingPlan, reference_value: float,
                        pricer: Callable[[PricingPlan], float] | None = None) -> ErrorDecomposition:
    """Attribute ``Q - reference`` to time discretisation, preintegration and quadrature.

    The bias is ``2 (Q(N) - Q(2N))``, the leading Euler term estimated from
    one step refinement. The smoothing error compares against a run with
    twice the Laguerre points and a hundredfold tighter Newton tolerance at
    the same step size and budget. The quadrature error is what remains.
    """
    run = pricer or (lambda p: price(p).value)
    base = replace(plan, richardson_level=0)
    q = run(base)
    q_fine = run(base.with_grid(2 * plan.grid.n_steps))
    bias = 2.0 * (q - q_fine)
    smoothing = 0.0
    if plan.smoothed:
        sharp = replace(plan.smoothing, m_lag=min(2 * plan.smoothing.m_lag, MAX_POINTS),
                        tol_newton=plan.smoothing.tol_newton / 100.0)
        smoothing = q - run(replace(base, smoothing=sharp))
    total = q - reference_value
    return ErrorDecomposition(bias, smoothing, total - bias - smoothing, total, q)


@dataclass(frozen=True)
class WorkModelParams:
    p: float
    s: float
    tol: float

    def __post_init__(self):
        if not (self.p > 0 and self.s > 0 and self.tol > 0):
            raise ValueError("p, s and tol must be positive")
        if not self.p * self.s - self.p - self.s > 0:
            raise ValueError(f"the work model needs ps - p - s > 0, got p={self.p}, s={self.s}")


@dataclass(frozen=True)
class WorkAdvice:
    """Exponent-based parameter suggestions with unit constants. Advisory only."""

    dt_exponent: float
    m_asgq_exponent: float
    m_lag_exponent: float
    work_exponent: float
    dt: float
    m_asgq: float
    m_lag: float
    advisory: bool = True


def work_advisor(params: WorkModelParams) -> WorkAdvice:
    """Balance bias, preintegration and quadrature errors at tolerance ``TOL``.

    ``dt ~ TOL^e``, ``M_ASGQ ~ dt^a``, ``M_Lag ~ dt^b``; the returned work
    exponent is that of ``M_ASGQ * M_Lag / dt`` in ``TOL``.
    """
    p, s = params.p, params.s
    den = p * s + p + s
    e_dt = den / (p * s - p - s)
    a = (p + s - p * s) / (p * den)
    b = (p + s - p * s) / (s * den)
    work = e_dt * (a + b - 1.0)
    dt = params.tol**e_dt
    return WorkAdvice(e_dt, a, b, work, dt, dt**a, dt**b)


class SmoothingPricer(BaseEstimator):
    """Estimator-style front end to :func:`price`.

    ``fit(model, payoff)`` runs the pipeline and stores ``value_``,
    ``stat_error_``, ``work_`` and the full ``estimate_``.
    """

    def __init__(self, n_steps: int = 8, T: float = 1.0, method: str = "asgq", smoothed: bool = True,
                 budget: int = 1000, n_samples: int = 2**10, n_shifts: int = 30, seed: int = 0,
                 m_lag: int = 32, tol_newton: float = 1e-10, richardson: bool = False):
        self.n_steps = n_steps
        self.T = T
        self.method = method
        self.smoothed = smoothed
        self.budget = budget
        self.n_samples = n_samples
        self.n_shifts = n_shifts
        self.seed = seed
        self.m_lag = m_lag
        self.tol_newton = tol_newton
        self.richardson = richardson

    def make_plan(self, model, payoff: PayoffSpec) -> PricingPlan:
        method = Method(self.method)
        if method is Method.ASGQ:
            cfg = AsgqConfig(self.budget)
        elif method is Method.RQMC:
            cfg = LatticeConfig(self.n_samples, self.n_shifts, self.seed)
        else:
            cfg = McConfig(self.n_samples, self.seed)
        return PricingPlan(model, payoff, PathGrid(self.n_steps, self.T, model.d), method, self.smoothed,
                           SmoothingConfig(m_lag=self.m_lag, tol_newton=self.tol_newton), cfg,
                           int(bool(self.richardson)))

    def fit(self, model, payoff: PayoffSpec):
        self.plan_ = self.make_plan(model, payoff)
        self.estimate_ = price(self.plan_)
        self.value_ = self.estimate_.value
        self.stat_error_ = self.estimate_.stat_error
        self.work_ = self.estimate_.work
        return self

    def relative_error(self, reference: float) -> float:
        return abs(self.value_ - reference) / abs(reference)
