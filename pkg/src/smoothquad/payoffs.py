"""Payoffs ``g = max(phi, 0)`` or ``g = 1{phi >= 0}`` with a smooth inner function ``phi``."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .hierarchy import PathGrid


class PayoffKind(str, Enum):
    POSITIVE_PART = "positive_part"
    INDICATOR = "indicator"


@dataclass(frozen=True)
class RegularityOrder:
    """``eta = 0`` for indicator payoffs, ``1`` for positive-part payoffs."""

    eta: int

    @classmethod
    def of(cls, kind: PayoffKind) -> "RegularityOrder":
        return cls(0 if PayoffKind(kind) is PayoffKind.INDICATOR else 1)


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """Payoff on terminal values ``x`` of shape ``(..., d)``.

    ``phi`` is affine, ``phi(x) = sign * (weights @ x - strike)``; ``sign``
    is -1 for payoffs decreasing in the monotone coordinate (puts, spreads),
    so that the root-finding problem always sees an increasing function.
    """

    kind: PayoffKind
    weights: np.ndarray
    strike: float
    sign: float = 1.0
    monotone_coord: int | None = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative and not all zero")
        if not self.strike > 0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if self.sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.weights.size

    @property
    def eta(self) -> int:
        return RegularityOrder.of(self.kind).eta

    def phi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.sign * (x @ self.weights - self.strike)

    def phi_grad(self, x=None) -> np.ndarray:
        return self.sign * self.weights

    def __call__(self, x) -> np.ndarray:
        return self.from_phi(self.phi(x))

    def from_phi(self, phi):
        """Payoff value as a function of ``phi`` alone."""
        if self.kind is PayoffKind.INDICATOR:
            return (phi >= 0).astype(float)
        return np.maximum(phi, 0.0)


def make_call(K: float) -> PayoffSpec:
    return PayoffSpec(PayoffKind.POSITIVE_PART, [1.0], K, name="call")


def make_put(K: float) -> PayoffSpec:
    return PayoffSpec(PayoffKind.POSITIVE_PART, [1.0], K, sign=-1.0, name="put")


def make_digital(K: float) -> PayoffSpec:
    return PayoffSpec(PayoffKind.INDICATOR, [1.0], K, name="digital")


def make_basket_call(c, K: float) -> PayoffSpec:
    return PayoffSpec(PayoffKind.POSITIVE_PART, c, K, name="basket_call")


def make_constant(value: float = 1.0) -> PayoffSpec:
    """Degenerate payoff ``g = value`` used to sanity-check pipelines."""
    return _ConstantPayoff(PayoffKind.INDICATOR, [1.0], 1.0, monotone_coord=None, name="constant",
                           value=float(value))


@dataclass(frozen=True, eq=False)
class _ConstantPayoff(PayoffSpec):
    value: float = 1.0

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1])

    def from_phi(self, phi):
        return np.full(np.shape(phi), self.value)


def root_function(payoff: PayoffSpec, model, grid: PathGrid, rest):
    """``P(y) = phi(X_T(y, rest))`` and its derivative in the smoothing coordinate.

    ``rest`` holds the remaining coordinates, shape ``(batch, dim - 1)``.
    Returns vectorised callables taking ``y`` of shape ``(batch,)`` or
    ``(batch, m)``. Models with factored Euler paths get the exact
    product-rule derivative; otherwise it is a central difference.
    """
    if hasattr(model, "affine_factors"):
        x0, c, a = model.affine_factors(grid, rest)
        return affine_root_function(payoff, x0, c, a)

    def P(y):
        return payoff.phi(model.terminal_along(grid, rest, y))

    def dP(y):
        y = np.asarray(y, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(y))
        return (P(y + h) - P(y - h)) / (2.0 * h)

    return P, dP


def affine_root_function(payoff: PayoffSpec, x0, c, a):
    """Root function for terminal values ``x0 * prod_k (c[..., k] + a[..., k] * y)``."""
    coef = payoff.sign * payoff.weights * x0

    def _eval(y, deriv):
        y = np.asarray(y, dtype=float)
        yy = y[..., None, None] if y.ndim == 2 else y[:, None, None]
        cc = c[:, None] if y.ndim == 2 else c
        aa = a[:, None] if y.ndim == 2 else a
        f = cc + aa * yy
        X = np.prod(f, axis=-1)
        if not deriv:
            return X @ coef - payoff.sign * payoff.strike
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.sum(aa / f, axis=-1)
        dX = X * ratio
        # product rule breaks down where a factor vanishes: recompute directly
        bad = ~np.isfinite(dX)
        if np.any(bad):
            dX = np.where(bad, _prod_derivative(f, aa), dX)
        return dX @ coef

    return (lambda y: _eval(y, False)), (lambda y: _eval(y, True))


def _prod_derivative(f, a):
    a = np.broadcast_to(a, f.shape)
    out = np.zeros(f.shape[:-1])
    for k in range(f.shape[-1]):
        others = np.prod(np.delete(f, k, axis=-1), axis=-1)
        out += a[..., k] * others
    return out


def check_monotone(payoff: PayoffSpec, model, grid: PathGrid, n_samples: int = 1000,
                   y_range=(-6.0, 6.0), seed: int = 0) -> bool:
    """Spot-check ``dP/dy > 0`` wherever the payoff kink can sit.

    Samples random remaining coordinates and smoothing values. For factored
    models only points with all Euler factors positive count (elsewhere the
    discrete path has left the economically meaningful region).
    """
    rng = np.random.default_rng(seed)
    rest = rng.standard_normal((n_samples, model.n_coords(grid) - 1))
    y = rng.uniform(*y_range, n_samples)
    _, dP = root_function(payoff, model, grid, rest)
    ok = np.ones(n_samples, dtype=bool)
    if hasattr(model, "affine_factors"):
        x0, c, a = model.affine_factors(grid, rest)
        ok = np.all(c + a * y[:, None, None] > 0, axis=(1, 2))
    return bool(np.all(dP(y)[ok] > 0))


def growth_condition_holds(payoff: PayoffSpec, model, grid: PathGrid, rest, y_large: float = 50.0) -> bool:
    """Large-argument sign check of ``P``: ``P(+large) > 0``."""
    P, _ = root_function(payoff, model, grid, rest)
    return bool(np.all(P(np.full(np.shape(rest)[0], y_large)) > 0))
