"""Convergence studies: quadrature and statistical error curves, weak error
rates, first-difference profiles, preintegration parameter sweeps and the
derivative-decay probe."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .estimators import AsgqConfig, Method, PricingPlan, build_integrand, price
from .hierarchy import PathGrid, haar_levels
from .models import GbmSpec, HestonSpec
from .quadrature import asgq, first_difference_profile
from .reference import reference_price
from .sampling import LatticeConfig, McConfig, inverse_normal_cdf, lattice_points
from .smoothing import SmoothedIntegrand, SmoothingConfig


@dataclass
class Fit:
    slope: float
    intercept: float
    r2: float

    @property
    def reliable(self) -> bool:
        return self.r2 >= 0.9


def fit_line(x, y) -> Fit:
    """Least-squares line through ``(x, y)`` with its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return Fit(float("nan"), float("nan"), float("nan"))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return Fit(float(slope), float(intercept), float(r2))


def loglog_fit(x, y) -> Fit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    return fit_line(np.log(x[ok]), np.log(y[ok]))


@dataclass
class StudyResult:
    """One study: an axis, a primary metric and optional extra columns.

    ``fits`` holds a log-log (or, for difference profiles, log-linear) fit
    per metric column; ``slope`` and ``r2`` mirror the primary one.
    ``flag`` is set when the fit should not be trusted.
    """

    kind: str
    axis_name: str
    axis: np.ndarray
    metric_name: str
    metric: np.ndarray
    columns: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    flag: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.metric = np.asarray(self.metric, dtype=float)
        if np.any(np.diff(self.axis) <= 0):
            raise ValueError("study axis must be strictly increasing")
        if not np.all(np.isfinite(self.metric)):
            raise ValueError("study metric contains non-finite values")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}

    @property
    def slope(self) -> float | None:
        fit = self.fits.get(self.metric_name)
        return None if fit is None or self.flag == "CI-dominated" else fit.slope

    @property
    def r2(self) -> float | None:
        fit = self.fits.get(self.metric_name)
        return None if fit is None else fit.r2

    def rows(self) -> list[dict]:
        names = [self.metric_name, *self.columns]
        values = [self.metric, *self.columns.values()]
        return [{self.axis_name: float(a), **{n: float(v[i]) for n, v in zip(names, values)}}
                for i, a in enumerate(self.axis)]


def _meta(plan: PricingPlan | None = None, **extra) -> dict:
    meta = {"timestamp": time.time(), **extra}
    if plan is not None:
        meta.update(method=plan.method.value, smoothed=plan.smoothed, n_steps=plan.grid.n_steps,
                    payoff=plan.payoff.name, model=type(plan.model).__name__)
    return meta


def _history_at(history, budget: int) -> float:
    value = float("nan")
    for n, est in history:
        if n > budget:
            break
        value = est
    return value


def quadrature_error_study(plan: PricingPlan, budgets: Sequence[int], reference: float | None = None,
                           normalizer: float | None = None) -> StudyResult:
    """Relative ASGQ error against evaluation count, smoothed and raw.

    One adaptive run per variant up to the largest budget; the estimate at
    a smaller budget is read off the refinement history, which is exactly
    what a run stopped at that budget returns.
    """
    if plan.method is not Method.ASGQ:
        raise ValueError("quadrature_error_study needs a deterministic (ASGQ) plan")
    budgets = np.asarray(sorted(budgets), dtype=int)
    if reference is None:
        reference = reference_price(plan.model, plan.payoff, plan.grid.T)
    if reference is None:
        raise ValueError("no reference value available for this plan")
    scale = abs(normalizer if normalizer is not None else reference)
    cols = {}
    for smoothed in (True, False):
        p = replace(plan, smoothed=smoothed, method_config=replace(plan.method_config, budget=int(budgets[-1])))
        f = build_integrand(p)
        _, state = asgq(f, f.dim, budget=int(budgets[-1]), max_level=p.method_config.max_level)
        est = np.array([_history_at(state.history, b) for b in budgets])
        cols["smoothed" if smoothed else "raw"] = np.abs(est - reference) / scale
    res = StudyResult("quad-study", "budget", budgets, "smoothed_rel_error", cols.pop("smoothed"),
                      {"raw_rel_error": cols["raw"]}, metadata=_meta(plan, reference=reference))
    res.fits = {"smoothed_rel_error": loglog_fit(res.axis, res.metric),
                "raw_rel_error": loglog_fit(res.axis, res.columns["raw_rel_error"])}
    return res


def statistical_error_study(plan: PricingPlan, sample_grid: Sequence[int]) -> StudyResult:
    """95% CI half-width against samples per shift (rQMC) or total samples (MC)."""
    if plan.method is Method.ASGQ:
        raise ValueError("statistical_error_study needs an MC or rQMC plan")
    grid = sorted(int(m) for m in sample_grid)
    errors, values = [], []
    for m in grid:
        cfg = replace(plan.method_config, **({"n_points": m} if plan.method is Method.RQMC else {"n_samples": m}))
        est = price(replace(plan, method_config=cfg))
        errors.append(est.stat_error)
        values.append(est.value)
    res = StudyResult("stat-study", "samples", grid, "ci_halfwidth", errors, {"value": values},
                      metadata=_meta(plan, seed=plan.method_config.seed))
    res.fits = {"ci_halfwidth": loglog_fit(res.axis, res.metric)}
    if not res.fits["ci_halfwidth"].reliable:
        res.flag = "low-R2"
    return res


def weak_error_study(model, payoff, N_grid: Sequence[int], method_config=None, smoothed: bool = False,
                     reference: float | None = None, T: float = 1.0,
                     smoothing: SmoothingConfig = SmoothingConfig()) -> StudyResult:
    """``|Q(N) - reference|`` against ``dt`` with error bars.

    ``method_config`` selects the estimator (MC by default). Points whose
    error lies within their error bar are unresolved; with fewer than two
    resolved points the study is flagged ``CI-dominated`` and no slope is
    reported.
    """
    cfg = method_config if method_config is not None else McConfig(10**6)
    method = {McConfig: Method.MC, LatticeConfig: Method.RQMC, AsgqConfig: Method.ASGQ}[type(cfg)]
    if reference is None:
        reference = reference_price(model, payoff, T)
    if reference is None:
        raise ValueError("no reference value available")
    Ns = sorted(int(n) for n in N_grid)
    dts, errs, cis, vals = [], [], [], []
    for N in reversed(Ns):
        est = price(PricingPlan(model, payoff, PathGrid(N, T, model.d), method, smoothed, smoothing, cfg))
        dts.append(T / N)
        errs.append(abs(est.value - reference))
        cis.append(est.stat_error if method is not Method.ASGQ else 0.0)
        vals.append(est.value)
    errs_a, cis_a = np.array(errs), np.array(cis)
    res = StudyResult("weak-error", "dt", dts, "abs_error", errs, {"ci_halfwidth": cis, "value": vals},
                      metadata=_meta(None, method=method.value, smoothed=smoothed, reference=reference,
                                     N_grid=Ns))
    resolved = errs_a > cis_a
    if resolved.sum() < 2:
        res.flag = "CI-dominated"
    res.fits = {"abs_error": loglog_fit(res.axis[resolved], errs_a[resolved])}
    return res


def mixed_difference_study(plan: PricingPlan, directions: Sequence[int], k_max: int) -> StudyResult:
    """``|dQ|`` along single axes; fits report the base-2 decay rate per refinement level."""
    f = build_integrand(plan)
    cols = {f"dir_{i}": first_difference_profile(f, f.dim, i, k_max) for i in directions}
    names = list(cols)
    ks = np.arange(1, k_max + 1)
    res = StudyResult("mixed-diff", "k", ks, names[0], cols.pop(names[0]), cols,
                      metadata=_meta(plan, directions=list(directions)))
    allcols = {names[0]: res.metric, **res.columns}
    for name, v in allcols.items():
        ok = v > 0
        res.fits[name] = fit_line(ks[ok], np.log2(v[ok]))
    return res


def smoothing_parameter_study(plan: PricingPlan, m_lag_grid: Sequence[int] = (), tol_grid: Sequence[float] = (),
                              fixed_tol: float = 1e-10, fixed_m_lag: int = 128, budget: int = 1000,
                              reference_m_lag: int = 256, reference_tol: float = 1e-13) -> tuple:
    """Relative change of the smoothed ASGQ estimate against ``m_lag`` and against the Newton tolerance.

    Every run uses the same ASGQ budget; the reference is the run with the
    most accurate preintegration. Returns ``(m_lag study, tol study)``;
    either is ``None`` when its grid is empty.
    """
    base = replace(plan, smoothed=True, method=Method.ASGQ, method_config=AsgqConfig(budget), richardson_level=0)

    def run(m_lag, tol):
        return price(replace(base, smoothing=replace(plan.smoothing, m_lag=int(m_lag), tol_newton=tol))).value

    ref = run(reference_m_lag, reference_tol)
    out = []
    if len(m_lag_grid):
        ms = sorted(m_lag_grid)
        err = [abs(run(m, fixed_tol) - ref) / abs(ref) for m in ms]
        r = StudyResult("smoothing-study", "m_lag", ms, "rel_error", err,
                        metadata=_meta(base, tol_newton=fixed_tol, budget=budget, reference=ref))
        r.fits = {"rel_error": loglog_fit(r.axis, r.metric)}
        out.append(r)
    else:
        out.append(None)
    if len(tol_grid):
        ts = sorted(tol_grid)
        err = [abs(run(fixed_m_lag, t) - ref) / abs(ref) for t in ts]
        r = StudyResult("smoothing-study", "tol_newton", ts, "rel_error", err,
                        metadata=_meta(base, m_lag=fixed_m_lag, budget=budget, reference=ref))
        r.fits = {"rel_error": loglog_fit(r.axis, r.metric)}
        out.append(r)
    else:
        out.append(None)
    return tuple(out)


def root_offset_study(plan: PricingPlan, offsets: Sequence[float], n_points: int = 2**12,
                      seed: int = 0) -> StudyResult:
    """Error of the preintegrated expectation when every root is shifted by a fixed offset.

    The expectation is taken over a fixed shifted-lattice point set so that
    the difference to the unshifted integrand is free of sampling noise.
    """
    f0 = SmoothedIntegrand(plan.payoff, plan.model, plan.grid, replace(plan.smoothing, root_offset=0.0))
    shift = np.random.default_rng(seed).random(f0.dim)
    u = lattice_points(LatticeConfig(n_points), f0.dim, shift)
    z = inverse_normal_cdf(np.clip(u, 1e-300, 1 - 1e-16))
    v0 = f0(z)
    ref = float(np.mean(v0))
    offs = sorted(float(o) for o in offsets)
    err = []
    for o in offs:
        f = SmoothedIntegrand(plan.payoff, plan.model, plan.grid, replace(plan.smoothing, root_offset=o))
        err.append(abs(float(np.mean(f(z) - v0))) / abs(ref))
    res = StudyResult("root-offset", "offset", offs, "rel_error", err, metadata=_meta(plan, seed=seed))
    res.fits = {"rel_error": loglog_fit(res.axis, res.metric)}
    return res


@dataclass
class DecayProbeReport:
    """Mean absolute first derivative per Haar level and the fitted per-level ratio."""

    levels: np.ndarray
    mean_abs_derivative: np.ndarray
    ratio: float
    level_ratios: np.ndarray
    n_probe_points: int

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=int)
        if self.levels.size and not np.array_equal(self.levels, np.arange(self.levels.size)):
            raise ValueError("levels must be contiguous from 0")


def rest_coordinate_levels(model, grid: PathGrid) -> np.ndarray:
    """Haar level of each non-smoothing coordinate; -1 marks coarse coordinates."""
    fine = np.array([h.n for h in haar_levels(grid.n_steps)[1:]], dtype=int)
    if isinstance(model, GbmSpec):
        return np.concatenate([np.full(model.d - 1, -1), np.tile(fine, model.d)])
    if isinstance(model, HestonSpec):
        vol = np.concatenate([[-1], fine])
        return np.concatenate([fine, np.tile(vol, model.n_vol_processes)])
    raise TypeError(f"no coordinate layout known for {type(model).__name__}")


def decay_probe(f: Callable, coord_levels, levels: Sequence[int] | None = None, n_probe_points: int = 64,
                h: float = 1e-4, seed: int = 0) -> DecayProbeReport:
    """Central differences of ``f`` in each coordinate, averaged per level."""
    coord_levels = np.asarray(coord_levels, dtype=int)
    if levels is None:
        levels = range(int(coord_levels.max()) + 1)
    levels = list(levels)
    dim = coord_levels.size
    z = np.random.default_rng(seed).standard_normal((n_probe_points, dim))
    means = []
    for n in levels:
        idx = np.flatnonzero(coord_levels == n)
        if idx.size == 0:
            raise ValueError(f"no coordinate at level {n}")
        acc = []
        for i in idx:
            zp, zm = z.copy(), z.copy()
            zp[:, i] += h
            zm[:, i] -= h
            acc.append(np.abs(f(zp) - f(zm)) / (2 * h))
        means.append(float(np.mean(acc)))
    means = np.array(means)
    with np.errstate(divide="ignore", invalid="ignore"):
        level_ratios = means[1:] / means[:-1]
    if means.size >= 2 and np.all(means > 0):
        ratio = float(np.exp(fit_line(np.arange(means.size), np.log(means)).slope))
    else:
        ratio = float("nan")
    return DecayProbeReport(np.arange(len(levels)) if levels == list(range(len(levels))) else levels,
                            means, ratio, level_ratios, n_probe_points)


def derivative_decay_probe(plan: PricingPlan, levels: Sequence[int] | None = None, n_probe_points: int = 64,
                           h: float = 1e-4, seed: int = 0) -> DecayProbeReport:
    if not plan.smoothed:
        raise ValueError("the decay probe works on the smoothed integrand")
    if not plan.grid.is_dyadic:
        raise ValueError("the decay probe needs a power-of-two number of steps")
    f = SmoothedIntegrand(plan.payoff, plan.model, plan.grid, plan.smoothing)
    return decay_probe(f, rest_coordinate_levels(plan.model, plan.grid), levels, n_probe_points, h, seed)
