"""Discretised asset dynamics.

Forward-Euler path maps for multivariate GBM and for Heston with five
variance schemes. Every model maps a full coordinate vector to terminal
values (:meth:`terminal`) and, with all coordinates except the smoothing
one held fixed, evaluates the terminal values along that coordinate
(:meth:`terminal_along`). For GBM the Euler terminal value of asset ``j``
is additionally available in factored form,

    X_j(y) = x0_j * prod_k (c_jk + a_jk * y),

through :meth:`GbmSpec.affine_factors`, which gives exact derivatives and
cheap evaluation during root finding and preintegration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .hierarchy import PathGrid, ShapeError, bridge_matrix, build_rotation


class ParameterError(ValueError):
    """Model parameters outside the domain of the chosen scheme."""


def _as_batch(z, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != dim:
        raise ShapeError(f"expected coordinates of width {dim}, got shape {z.shape}")
    return z


@dataclass(frozen=True, eq=False)
class GbmSpec:
    """Correlated driftless (or drifted) geometric Brownian motions.

    ``corr`` defaults to the identity and ``drift`` to zero.
    """

    x0: np.ndarray
    sigma: np.ndarray
    corr: np.ndarray | None = None
    drift: np.ndarray | None = None

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), x0.shape).copy()
        d = x0.size
        corr = np.eye(d) if self.corr is None else np.asarray(self.corr, dtype=float)
        drift = np.zeros(d) if self.drift is None else np.broadcast_to(
            np.asarray(self.drift, dtype=float), x0.shape).copy()
        if np.any(x0 <= 0) or not np.all(np.isfinite(x0)):
            raise ParameterError("x0 must be positive")
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ParameterError("sigma must be positive")
        if corr.shape != (d, d) or not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
            raise ParameterError("corr must be a symmetric d x d matrix with unit diagonal")
        try:
            chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            # semidefinite matrices: fall back to an eigen square root
            w, V = np.linalg.eigh(corr)
            if w.min() < -1e-12:
                raise ParameterError("corr is not positive semidefinite") from None
            chol = V * np.sqrt(np.clip(w, 0.0, None))
        for name, val in (("x0", x0), ("sigma", sigma), ("corr", corr), ("drift", drift)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def equicorrelated(cls, x0, sigma, rho: float = 0.0, drift=None) -> "GbmSpec":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        d = x0.size
        corr = np.full((d, d), float(rho))
        np.fill_diagonal(corr, 1.0)
        return cls(x0, sigma, corr, drift)

    @property
    def d(self) -> int:
        return self.x0.size

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    # hierarchical layout: [y1, y_2..y_d, fine_1 (N-1), ..., fine_d (N-1)]
    def n_coords(self, grid: PathGrid) -> int:
        return self.d * grid.n_steps

    def affine_factors(self, grid: PathGrid, rest):
        N, d = grid.n_steps, self.d
        rest = _as_batch(rest, d * N - 1)
        A_inv = build_rotation(d).A_inv
        L = bridge_matrix(grid)
        y_rest = rest[:, : d - 1]
        fine = rest[:, d - 1:].reshape(rest.shape[0], d, N - 1)
        coarse = y_rest @ A_inv[:, 1:].T
        incr = coarse[:, :, None] * L[:, 0] + fine @ L[:, 1:].T
        incr = np.einsum("ij,bjk->bik", self.chol, incr)
        c = 1.0 + self.drift[:, None] * grid.dt + self.sigma[:, None] * incr
        slope = self.sigma * (self.chol @ A_inv[:, 0])
        a = np.broadcast_to(slope[:, None] * L[:, 0], c.shape)
        return self.x0, c, a

    def terminal(self, grid: PathGrid, z) -> np.ndarray:
        z = _as_batch(z, self.n_coords(grid))
        x0, c, a = self.affine_factors(grid, z[:, 1:])
        return x0 * np.prod(c + a * z[:, :1, None], axis=-1)

    def terminal_along(self, grid: PathGrid, rest, y) -> np.ndarray:
        x0, c, a = self.affine_factors(grid, rest)
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            c, a = c[:, None], a[:, None]
        return x0 * np.prod(c + a * y[..., None, None], axis=-1)

    def coarsen(self, grid: PathGrid, z) -> np.ndarray:
        """Coordinates on the half-step grid driving the same Brownian path.

        In level-major bridge order the first ``N/2`` coordinates of each
        block already determine the path on the coarse grid.
        """
        N, d = grid.n_steps, self.d
        if N % 2:
            raise ShapeError("coarsening needs an even number of steps")
        z = _as_batch(z, self.n_coords(grid))
        fine = z[:, d:].reshape(z.shape[0], d, N - 1)[:, :, : N // 2 - 1]
        return np.concatenate([z[:, :d], fine.reshape(z.shape[0], -1)], axis=1)


def gbm_terminal(spec: GbmSpec, grid: PathGrid, increments, diagnostics: dict | None = None) -> np.ndarray:
    """Euler terminal values from correlated Brownian increments of shape ``(..., d, N)``."""
    dW = np.asarray(increments, dtype=float)
    if dW.shape[-2:] != (spec.d, grid.n_steps):
        raise ShapeError(f"increments must end in ({spec.d}, {grid.n_steps}), got {dW.shape}")
    factors = 1.0 + spec.drift[:, None] * grid.dt + spec.sigma[:, None] * dW
    if diagnostics is not None:
        diagnostics["negative_factors"] = diagnostics.get("negative_factors", 0) + int(np.sum(factors < 0))
    return spec.x0 * np.prod(factors, axis=-1)


class HestonScheme(str, Enum):
    FULL_TRUNCATION = "full_truncation"
    PARTIAL_TRUNCATION = "partial_truncation"
    REFLECTION = "reflection"
    ABR = "abr"
    OU_BASED = "ou_based"


# (f1, f2, f3) of the modified Euler schemes
_EULER_VARIANTS: dict[HestonScheme, tuple[Callable, Callable, Callable]] = {
    HestonScheme.FULL_TRUNCATION: (lambda v: v, lambda v: np.maximum(v, 0.0), lambda v: np.maximum(v, 0.0)),
    HestonScheme.PARTIAL_TRUNCATION: (lambda v: v, lambda v: v, lambda v: np.maximum(v, 0.0)),
    HestonScheme.REFLECTION: (np.abs, np.abs, np.abs),
}


@dataclass(frozen=True)
class OuParams:
    """Sum-of-squared-OU representation of a CIR variance process."""

    alpha: float
    beta: float
    n_star: float

    @classmethod
    def from_heston(cls, spec: "HestonSpec") -> "OuParams":
        if spec.xi <= 0:
            raise ParameterError("OU-based scheme needs xi > 0 (beta = xi/2 would vanish)")
        return cls(-spec.kappa / 2.0, spec.xi / 2.0, 4.0 * spec.theta * spec.kappa / spec.xi**2)

    @property
    def n_low(self) -> int:
        return int(math.floor(self.n_star + 1e-12))

    @property
    def p(self) -> float:
        frac = self.n_star - self.n_low
        return 0.0 if frac < 1e-12 else frac

    @property
    def kappa(self) -> float:
        return -2.0 * self.alpha

    @property
    def xi(self) -> float:
        return 2.0 * self.beta

    @property
    def theta(self) -> float:
        return -self.n_star * self.beta**2 / (2.0 * self.alpha)


@dataclass(frozen=True)
class HestonSpec:
    """Heston dynamics plus the variance discretisation scheme.

    ``ou_processes`` fixes the number of OU factors for the OU-based scheme;
    by default it is ``n* = 4 theta kappa / xi^2``, which must then be an
    integer (use :func:`ou_noninteger_price` otherwise).
    """

    s0: float = 100.0
    v0: float = 0.04
    mu: float = 0.0
    rho: float = 0.0
    kappa: float = 1.0
    theta: float = 0.04
    xi: float = 0.1
    scheme: HestonScheme = HestonScheme.FULL_TRUNCATION
    ou_processes: int | None = None
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scheme", HestonScheme(self.scheme))
        if not self.s0 > 0:
            raise ParameterError("s0 must be positive")
        if not self.v0 >= 0:
            raise ParameterError("v0 must be nonnegative")
        if not -1.0 < self.rho < 1.0:
            raise ParameterError("rho must lie in (-1, 1)")
        if self.kappa < 0 or self.theta < 0 or self.xi < 0:
            raise ParameterError("kappa, theta, xi must be nonnegative")
        if self.scheme is HestonScheme.OU_BASED:
            ou = OuParams.from_heston(self)
            if self.ou_processes is None:
                if ou.p != 0.0:
                    raise ParameterError(
                        f"n* = {ou.n_star:g} is not an integer; set ou_processes or use ou_noninteger_price")
                if ou.n_low < 1:
                    raise ParameterError("OU-based scheme needs n* >= 1")
            elif int(self.ou_processes) != self.ou_processes or self.ou_processes < 1:
                raise ParameterError("ou_processes must be a positive integer")

    d = 1

    @property
    def x0(self) -> np.ndarray:
        return np.array([self.s0])

    @property
    def n_vol_processes(self) -> int:
        if self.scheme is not HestonScheme.OU_BASED:
            return 1
        if self.ou_processes is not None:
            return int(self.ou_processes)
        return OuParams.from_heston(self).n_low

    # hierarchical layout: [y1, price fine (N-1), vol BM 1 (N), ..., vol BM n (N)].
    # y1 is the coarse coordinate of the price Brownian motion W^S; the first
    # vol block starts with the orthogonal coarse coordinate (see _bridge_coords).
    def n_coords(self, grid: PathGrid) -> int:
        return grid.n_steps * (1 + self.n_vol_processes)

    def variance_drivers(self, grid: PathGrid, dW_vol):
        """Per-step ``sqrt(v_k)`` and correlated price noise ``rho * sqrt(v_k) dW^v_k``.

        ``dW_vol`` has shape ``(batch, n_vol, N)``. Also returns ``v_T``.
        """
        N, dt = grid.n_steps, grid.dt
        batch = dW_vol.shape[0]
        sqrt_v = np.empty((batch, N))
        corr = np.empty((batch, N))
        if self.scheme is HestonScheme.OU_BASED:
            ou = OuParams.from_heston(self)
            Y, _, driver = _ou_paths(ou, dt, dW_vol, self.v0)
            sqrt_v[:] = np.sqrt(Y[:, :-1])
            corr[:] = self.rho * driver
            return sqrt_v, corr, Y[:, -1]
        v = np.full(batch, float(self.v0))
        dWv = dW_vol[:, 0, :]
        negatives = 0
        for k in range(N):
            if self.scheme is HestonScheme.ABR:
                s = np.sqrt(v)
                v_next = abr_vol_step(self, v, dWv[:, k], dt)
            else:
                f1, f2, f3 = _EULER_VARIANTS[self.scheme]
                s = np.sqrt(f3(v))
                v_next = f1(v) + self.kappa * (self.theta - f2(v)) * dt + self.xi * s * dWv[:, k]
                negatives += int(np.sum(v_next < 0))
            sqrt_v[:, k] = s
            corr[:, k] = self.rho * s * dWv[:, k]
            v = v_next
        self.diagnostics["negative_variance"] = self.diagnostics.get("negative_variance", 0) + negatives
        return sqrt_v, corr, v

    def _bridge_coords(self, grid: PathGrid, z):
        """Bridge coordinates ``(b, N)`` of the independent price BM and ``(b, n, N)`` of the vol BMs.

        The two coarse coordinates are rotated so that ``z[:, 0]`` drives
        ``rho W^v + sqrt(1 - rho^2) W``, the terminal value of ``W^S``.
        """
        N, n_vol = grid.n_steps, self.n_vol_processes
        b = z.shape[0]
        r = math.sqrt(1.0 - self.rho**2)
        vol = z[:, N:].reshape(b, n_vol, N).copy()
        w = vol[:, 0, 0].copy()
        vol[:, 0, 0] = self.rho * z[:, 0] + r * w
        price = np.concatenate([(r * z[:, 0] - self.rho * w)[:, None], z[:, 1:N]], axis=1)
        return price, vol

    def terminal(self, grid: PathGrid, z) -> np.ndarray:
        z = _as_batch(z, self.n_coords(grid))
        price, vol = self._bridge_coords(grid, z)
        L = bridge_matrix(grid)
        sT, _ = heston_terminal(self, grid, price @ L.T, vol @ L.T)
        return np.atleast_1d(sT)[:, None]

    def terminal_along(self, grid: PathGrid, rest, y) -> np.ndarray:
        """Terminal values with the smoothing coordinate set to ``y``.

        ``rest`` has shape ``(b, dim - 1)``, ``y`` shape ``(b,)`` or
        ``(b, m)``; the result has shape ``y.shape + (1,)``.
        """
        rest = _as_batch(rest, self.n_coords(grid) - 1)
        y = np.asarray(y, dtype=float)
        yy = y.reshape(rest.shape[0], -1)
        m = yy.shape[1]
        z = np.concatenate([yy.reshape(-1, 1), np.repeat(rest, m, axis=0)], axis=1)
        return self.terminal(grid, z).reshape(*y.shape, 1)

    def coarsen(self, grid: PathGrid, z) -> np.ndarray:
        """Half-step-grid coordinates of the same price and variance Brownian paths."""
        N, n_vol = grid.n_steps, self.n_vol_processes
        if N % 2:
            raise ShapeError("coarsening needs an even number of steps")
        z = _as_batch(z, self.n_coords(grid))
        b = z.shape[0]
        price = z[:, : N // 2]
        vol = z[:, N:].reshape(b, n_vol, N)[:, :, : N // 2].reshape(b, -1)
        return np.concatenate([price, vol], axis=1)


def abr_vol_step(spec: HestonSpec, v, dW_v, dt: float):
    """Locally lognormal moment-matched variance update.

    The conditional mean equals the CIR conditional mean
    ``theta + (v - theta) exp(-kappa dt)`` exactly.
    """
    v = np.asarray(v, dtype=float)
    e = math.exp(-spec.kappa * dt)
    mean = e * v + (1.0 - e) * spec.theta
    # (1 - exp(-2 kappa dt)) / kappa, continuous at kappa = 0
    frac = -math.expm1(-2.0 * spec.kappa * dt) / spec.kappa if spec.kappa > 0 else 2.0 * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma2 = np.log1p(0.5 * spec.xi**2 * v * frac / mean**2) / dt
    gamma2 = np.where(mean > 0, gamma2, 0.0)
    out = mean * np.exp(-0.5 * gamma2 * dt + np.sqrt(gamma2) * dW_v)
    return np.where(mean > 0, out, 0.0)


def _ou_paths(ou: OuParams, dt: float, dW, v0: float):
    """Euler paths of ``n`` OU factors; ``dW`` has shape ``(batch, n, N)``.

    Returns the variance path ``Y`` (batch, N+1), the factor paths and the
    per-step martingale increment ``sum_i X^i_k dW^i_k`` (= sqrt(Y_k) dW~_k).
    """
    batch, n, N = dW.shape
    X = np.zeros((batch, n, N + 1))
    X[:, 0, 0] = math.sqrt(v0)
    for k in range(N):
        X[:, :, k + 1] = X[:, :, k] * (1.0 + ou.alpha * dt) + ou.beta * dW[:, :, k]
    Y = np.sum(X**2, axis=1)
    driver = np.sum(X[:, :, :-1] * dW, axis=1)
    return Y, X, driver


def ou_vol_path(params: OuParams, grid: PathGrid, dW, v0: float, fallback=None):
    """Variance path ``Y = sum_i (X^i)^2`` and the Brownian increments driving the price.

    ``dW`` holds the OU factors' Brownian increments, shape ``(n, N)`` or
    ``(batch, n, N)``. Where ``Y_k == 0`` the price increment
    ``(1/sqrt(Y)) sum_i X^i dW^i`` is undefined and the matching entry of
    ``fallback`` (an independent increment with variance ``dt``) is used;
    without a fallback those entries are drawn from a fresh generator.
    """
    dW = np.asarray(dW, dtype=float)
    single = dW.ndim == 2
    if single:
        dW = dW[None]
    if dW.shape[-1] != grid.n_steps:
        raise ShapeError("dW must have one column per time step")
    Y, _, driver = _ou_paths(params, grid.dt, dW, v0)
    Yk = Y[:, :-1]
    pos = Yk > 0
    dW_tilde = np.zeros_like(driver)
    dW_tilde[pos] = driver[pos] / np.sqrt(Yk[pos])
    if not np.all(pos):
        if fallback is None:
            fallback = np.random.default_rng().normal(0.0, math.sqrt(grid.dt), driver.shape)
        fallback = np.broadcast_to(np.asarray(fallback, dtype=float), driver.shape)
        dW_tilde[~pos] = fallback[~pos]
    if single:
        return Y[0], dW_tilde[0]
    return Y, dW_tilde


def heston_terminal(spec: HestonSpec, grid: PathGrid, z_price, z_vol):
    """Terminal ``(S_T, v_T)`` from Brownian increments of the two drivers.

    ``z_price`` are the increments of the Brownian motion independent of the
    variance (shape ``(..., N)``), ``z_vol`` those of the variance driver
    (``(..., N)``, or ``(..., n, N)`` for ``n`` OU factors). Correlation is
    applied inside via ``dW^S = rho dW^v + sqrt(1 - rho^2) dW``.
    """
    N = grid.n_steps
    zp = np.asarray(z_price, dtype=float)
    zv = np.asarray(z_vol, dtype=float)
    single = zp.ndim == 1
    zp = zp.reshape(-1, N)
    zv = zv.reshape(zp.shape[0], spec.n_vol_processes, N)
    sqrt_v, corr, vT = spec.variance_drivers(grid, zv)
    r = math.sqrt(1.0 - spec.rho**2)
    factors = 1.0 + spec.mu * grid.dt + corr + r * sqrt_v * zp
    sT = spec.s0 * np.prod(factors, axis=-1)
    if single:
        return float(sT[0]), float(vT[0])
    return sT, vT


def ou_noninteger_price(spec: HestonSpec, estimate: Callable[[HestonSpec], float]) -> float:
    """Interpolate an OU-based estimate between the neighbouring integer factor counts.

    ``estimate`` prices a spec whose ``ou_processes`` is set. For integer
    ``n*`` this is a single call.
    """
    ou = OuParams.from_heston(spec)
    base = dict(s0=spec.s0, v0=spec.v0, mu=spec.mu, rho=spec.rho, kappa=spec.kappa,
                theta=spec.theta, xi=spec.xi, scheme=HestonScheme.OU_BASED)
    if ou.p == 0.0:
        return estimate(HestonSpec(**base, ou_processes=max(ou.n_low, 1)))
    if ou.n_low < 1:
        raise ParameterError("interpolation needs n* >= 1")
    lo = estimate(HestonSpec(**base, ou_processes=ou.n_low))
    hi = estimate(HestonSpec(**base, ou_processes=ou.n_low + 1))
    return (1.0 - ou.p) * lo + ou.p * hi
