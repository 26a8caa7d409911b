"""Numerical smoothing: locate the payoff discontinuity along the smoothing
coordinate, then integrate that coordinate out with Gaussian rules split at
the located roots.

The result is a function of the remaining coordinates that is smooth even
when the payoff has a jump or kink. The transformer class
:class:`NumericalSmoother` wraps it with a scikit-learn style interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .hierarchy import PathGrid
from .payoffs import PayoffSpec, root_function
from .quadrature import MAX_POINTS, RuleFamily, gauss_rule

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class EvaluationError(FloatingPointError):
    """Non-finite function value during root finding or preintegration."""


@dataclass(frozen=True)
class SmoothingConfig:
    m_lag: int = 32
    tol_newton: float = 1e-10
    max_newton_iters: int = 100
    bracket_halfwidth: float = 10.0
    multi_root_scan_points: int = 64
    m_leg: int = 32
    far_root: float = 8.0
    min_interval: float = 1e-6
    root_offset: float = 0.0   # artificial shift of every root, for sensitivity studies
    scale_tails: bool = True   # stretch Laguerre nodes by 1/sqrt(1 + y*^2)

    def __post_init__(self):
        for name in ("m_lag", "max_newton_iters", "multi_root_scan_points", "m_leg"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("tol_newton", "bracket_halfwidth", "far_root", "min_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class RootResult:
    roots: np.ndarray
    residuals: np.ndarray
    newton_iters: np.ndarray

    def __len__(self):
        return self.roots.size


def _check_finite(values, where):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~np.isfinite(np.reshape(values, -1)))[0]
        raise EvaluationError(f"non-finite value at y={np.reshape(where, -1)[bad]!r}")
    return values


def _polish(P, dP, lo, hi, config: SmoothingConfig):
    """Safeguarded Newton on brackets ``[lo, hi]`` (arrays) with ``P(lo) P(hi) <= 0``.

    ``P`` and ``dP`` act elementwise on arrays shaped like ``lo``.
    Newton steps leaving the bracket are replaced by bisection.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    f_lo = _check_finite(P(lo), lo)
    y = 0.5 * (lo + hi)
    iters = np.zeros(y.shape, dtype=int)
    res = np.full(y.shape, np.inf)
    done = np.zeros(y.shape, dtype=bool)
    for _ in range(config.max_newton_iters + 60):
        f = _check_finite(P(y), y)
        res = np.where(done, res, np.abs(f))
        done |= res <= config.tol_newton
        if np.all(done):
            break
        same = np.sign(f) == np.sign(f_lo)
        lo = np.where(~done & same, y, lo)
        f_lo = np.where(~done & same, f, f_lo)
        hi = np.where(~done & ~same, y, hi)
        df = dP(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = y - f / df
        ok = np.isfinite(step) & (step > np.minimum(lo, hi)) & (step < np.maximum(lo, hi))
        nxt = np.where(ok, step, 0.5 * (lo + hi))
        if np.all((nxt == y) | done):
            break
        y = np.where(done, y, nxt)
        iters += ~done
    return y, res, iters


def find_root(P: Callable, dP: Callable, config: SmoothingConfig = SmoothingConfig()) -> RootResult:
    """Locate the single root of a scalar increasing function.

    Newton from ``y = 0``; if it diverges or leaves the bracket the root is
    bracketed by a sign scan and polished by safeguarded Newton. An empty
    result means no sign change on the bracket (the function is positive,
    or negative, throughout).
    """
    h = config.bracket_halfwidth
    y, it = 0.0, 0
    for it in range(1, config.max_newton_iters + 1):
        f = float(_check_finite(P(y), y))
        if abs(f) <= config.tol_newton:
            return RootResult(np.array([y]), np.array([abs(f)]), np.array([it - 1]))
        df = float(dP(y))
        if not np.isfinite(df) or df == 0.0:
            break
        y = y - f / df
        if not abs(y) <= h:
            break
    found = find_all_roots(P, config, dP)
    if len(found) > 1:
        # closest to the origin is the one Newton was heading for
        i = int(np.argmin(np.abs(found.roots)))
        return RootResult(found.roots[i:i + 1], found.residuals[i:i + 1], found.newton_iters[i:i + 1] + it)
    return found


def _fd_derivative(P):
    def dP(y):
        h = 1e-6 * np.maximum(1.0, np.abs(y))
        return (P(y + h) - P(y - h)) / (2.0 * h)
    return dP


def find_all_roots(P: Callable, config: SmoothingConfig = SmoothingConfig(), dP: Callable | None = None) -> RootResult:
    """All simple roots of a scalar function on ``[-h, h]``, sorted.

    Uniform scan for sign changes, safeguarded Newton on every bracket,
    duplicates within ``1e-8`` dropped.
    """
    dP = dP or _fd_derivative(P)
    h = config.bracket_halfwidth
    grid = np.linspace(-h, h, config.multi_root_scan_points)
    vals = _check_finite(P(grid), grid)
    neg = np.signbit(vals)
    idx = np.flatnonzero(neg[:-1] != neg[1:])
    if idx.size == 0:
        return RootResult(np.empty(0), np.empty(0), np.empty(0, dtype=int))
    roots, res, iters = _polish(P, dP, grid[idx], grid[idx + 1], config)
    keep = np.concatenate([[True], np.diff(roots) > 1e-8])
    return RootResult(roots[keep], res[keep], iters[keep])


def _batch_roots(P, dP, n: int, config: SmoothingConfig):
    """Roots for ``n`` independent functions at once.

    ``P(y)`` accepts ``(n, m)`` arrays. Returns a list of root arrays, the
    largest residual and the total Newton iterations.
    """
    h = config.bracket_halfwidth
    grid = np.linspace(-h, h, config.multi_root_scan_points)
    vals = _check_finite(P(np.broadcast_to(grid, (n, grid.size))), grid)
    neg = np.signbit(vals)
    change = neg[:, :-1] != neg[:, 1:]
    counts = change.sum(axis=1)
    out = [np.empty(0)] * n
    if not counts.any():
        return out, 0.0, 0
    r_max = int(counts.max())
    # pad every row to r_max brackets; padded slots repeat the first bracket
    order = np.argsort(~change, axis=1, kind="stable")[:, :r_max]
    valid = np.take_along_axis(change, order, axis=1)
    lo = grid[order]
    hi = grid[order + 1]
    y, res, iters = _polish(P, dP, lo, hi, config)
    for i in np.flatnonzero(counts):
        r = y[i, valid[i]]
        r = np.sort(r)
        keep = np.concatenate([[True], np.diff(r) > 1e-8]) if r.size else r.astype(bool)
        out[i] = r[keep]
    return out, float(res[valid].max()), int(iters[valid].sum())


def _clean_roots(roots: np.ndarray, config: SmoothingConfig) -> np.ndarray:
    roots = roots[np.abs(roots) <= config.far_root]
    if roots.size > 1:
        keep = np.concatenate([[True], np.diff(roots) >= config.min_interval])
        roots = roots[keep]
    return roots + config.root_offset


def preintegration_rule(roots, config: SmoothingConfig = SmoothingConfig()):
    """Nodes and weights approximating integration against the standard normal density.

    ``roots`` has shape ``(b, R)``: each row is split at its ``R`` sorted
    roots. No roots: a ``2 m_lag`` point Gauss-Hermite rule. Otherwise
    Gauss-Laguerre on the two outer tails (``zeta = y* +/- u_k / lam``,
    density and ``exp(u_k) / lam`` folded into the weights) and
    Gauss-Legendre on every interior interval. ``lam = sqrt(1 + y*^2)``
    matches the Laguerre weight to the Gaussian decay rate at the root;
    with ``scale_tails=False`` it is 1. Returns arrays of shape ``(b, M)``.
    """
    roots = np.atleast_2d(np.asarray(roots, dtype=float))
    b, R = roots.shape
    if R == 0:
        rule = gauss_rule(RuleFamily.HERMITE, min(2 * config.m_lag, MAX_POINTS))
        return np.broadcast_to(rule.nodes, (b, len(rule))), np.broadcast_to(rule.weights, (b, len(rule)))
    lag = gauss_rule(RuleFamily.LAGUERRE, config.m_lag)
    with np.errstate(divide="ignore"):
        # weights that underflow carry no mass anyway
        u, logw = lag.nodes, np.log(lag.weights) + lag.nodes
    lo, hi = roots[:, :1], roots[:, -1:]
    if config.scale_tails:
        lam_lo, lam_hi = np.sqrt(1.0 + lo**2), np.sqrt(1.0 + hi**2)
    else:
        lam_lo = lam_hi = np.ones_like(lo)
    right = hi + u / lam_hi
    left = lo - u / lam_lo
    w_right = np.exp(logw - 0.5 * right**2 - _LOG_SQRT_2PI) / lam_hi
    w_left = np.exp(logw - 0.5 * left**2 - _LOG_SQRT_2PI) / lam_lo
    nodes, weights = [left[:, ::-1]], [w_left[:, ::-1]]
    if R > 1:
        leg = gauss_rule(RuleFamily.LEGENDRE, config.m_leg)
        for i in range(R - 1):
            a, c = roots[:, i:i + 1], roots[:, i + 1:i + 2]
            half = 0.5 * (c - a)
            x = 0.5 * (a + c) + half * leg.nodes
            nodes.append(x)
            weights.append(half * leg.weights * np.exp(-0.5 * x**2 - _LOG_SQRT_2PI))
    nodes.append(right)
    weights.append(w_right)
    return np.concatenate(nodes, axis=1), np.concatenate(weights, axis=1)


def preintegrate(G: Callable, roots: RootResult | np.ndarray, config: SmoothingConfig = SmoothingConfig()) -> float:
    """``int G(y) phi(y) dy`` for a scalar function ``G`` with discontinuities at ``roots``."""
    r = roots.roots if isinstance(roots, RootResult) else np.asarray(roots, dtype=float)
    r = _clean_roots(np.sort(r), config)
    nodes, weights = preintegration_rule(r[None, :], config)
    vals = np.array([G(x) for x in nodes[0]], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"non-finite G at node {nodes[0][~np.isfinite(vals)][0]!r}")
    return math.fsum(weights[0] * vals)


@dataclass
class SmoothingDiagnostics:
    n_calls: int = 0
    n_points: int = 0
    root_counts: dict = field(default_factory=dict)
    newton_iters: int = 0
    max_residual: float = 0.0
    node_evaluations: int = 0


class SmoothedIntegrand:
    """Preintegrated payoff as a function of the remaining ``dim`` coordinates.

    Calling it with an ``(n, dim)`` array returns ``n`` values. Pure apart
    from the diagnostics counters.
    """

    def __init__(self, payoff: PayoffSpec, model, grid: PathGrid, config: SmoothingConfig = SmoothingConfig()):
        if payoff.monotone_coord is None:
            raise ValueError(f"payoff {payoff.name!r} has no monotone coordinate to smooth along")
        self.payoff = payoff
        self.model = model
        self.grid = grid
        self.config = config
        self.dim = model.n_coords(grid) - 1
        self.diagnostics = SmoothingDiagnostics()

    def __call__(self, rest) -> np.ndarray:
        rest = np.asarray(rest, dtype=float)
        single = rest.ndim == 1
        rest = np.atleast_2d(rest)
        if rest.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {rest.shape[1]}")
        n = rest.shape[0]
        P, dP = root_function(self.payoff, self.model, self.grid, rest)
        roots, max_res, iters = _batch_roots(P, dP, n, self.config)
        roots = [_clean_roots(r, self.config) for r in roots]
        out = np.empty(n)
        counts = np.array([r.size for r in roots])
        d = self.diagnostics
        d.n_calls += 1
        d.n_points += n
        d.newton_iters += iters
        d.max_residual = max(d.max_residual, max_res)
        for R in np.unique(counts):
            rows = np.flatnonzero(counts == R)
            d.root_counts[int(R)] = d.root_counts.get(int(R), 0) + rows.size
            R_roots = np.array([roots[i] for i in rows]).reshape(rows.size, R)
            nodes, weights = preintegration_rule(R_roots, self.config)
            P_rows, _ = root_function(self.payoff, self.model, self.grid, rest[rows])
            vals = self.payoff.from_phi(P_rows(nodes))
            vals = _check_finite(vals, nodes)
            d.node_evaluations += vals.size
            out[rows] = np.sum(weights * vals, axis=1)
        return out[0] if single else out


def smooth(payoff: PayoffSpec, model, grid: PathGrid, config: SmoothingConfig = SmoothingConfig()) -> SmoothedIntegrand:
    return SmoothedIntegrand(payoff, model, grid, config)


class RawIntegrand:
    """Unsmoothed ``G = g(X_T(z))`` over all coordinates, smoothing coordinate first."""

    def __init__(self, payoff: PayoffSpec, model, grid: PathGrid):
        self.payoff = payoff
        self.model = model
        self.grid = grid
        self.dim = model.n_coords(grid)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        X = self.model.terminal(self.grid, np.atleast_2d(z))
        out = self.payoff(X)
        return out[0] if single else out


class NumericalSmoother(TransformerMixin, BaseEstimator):
    """Maps Gaussian coordinate samples to preintegrated payoff values.

    ``fit(model, payoff)`` binds the problem; ``transform(Z)`` accepts the
    remaining ``dim`` coordinates per row (or the full ``dim + 1`` with the
    smoothing coordinate in column 0, which is then ignored).
    """

    def __init__(self, n_steps: int = 8, T: float = 1.0, m_lag: int = 32, tol_newton: float = 1e-10,
                 m_leg: int = 32, bracket_halfwidth: float = 10.0, multi_root_scan_points: int = 64):
        self.n_steps = n_steps
        self.T = T
        self.m_lag = m_lag
        self.tol_newton = tol_newton
        self.m_leg = m_leg
        self.bracket_halfwidth = bracket_halfwidth
        self.multi_root_scan_points = multi_root_scan_points

    def _config(self) -> SmoothingConfig:
        return SmoothingConfig(m_lag=self.m_lag, tol_newton=self.tol_newton, m_leg=self.m_leg,
                               bracket_halfwidth=self.bracket_halfwidth,
                               multi_root_scan_points=self.multi_root_scan_points)

    def fit(self, model, payoff: PayoffSpec):
        grid = PathGrid(self.n_steps, self.T, model.d)
        self.integrand_ = SmoothedIntegrand(payoff, model, grid, self._config())
        self.n_features_in_ = self.integrand_.dim
        return self

    def transform(self, X):
        if not hasattr(self, "integrand_"):
            raise NotFittedError("NumericalSmoother is not fitted yet")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] == self.n_features_in_ + 1:
            X = X[:, 1:]
        return self.integrand_(X)
