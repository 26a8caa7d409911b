"""Gaussian rules and dimension-adaptive sparse-grid quadrature.

Rules come from the Golub-Welsch eigenvalue construction with weights
recomputed from the Christoffel function, which keeps tiny tail weights
accurate to full relative precision. The adaptive driver follows
Gerstner & Griebel: a downward-closed index set grows by admitting the
forward neighbours of the active index with the largest hierarchical
surplus ``|dQ^beta|``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_POINTS = 1025


class RuleFamily(str, Enum):
    HERMITE = "hermite"      # probabilists', standard normal density
    LAGUERRE = "laguerre"    # exp(-x) on [0, inf)
    LEGENDRE = "legendre"    # Lebesgue measure on [-1, 1]


@dataclass(frozen=True, eq=False)
class Rule1D:
    nodes: np.ndarray
    weights: np.ndarray
    family: RuleFamily

    def __len__(self):
        return self.nodes.size

    def on_interval(self, a: float, b: float) -> "Rule1D":
        if self.family is not RuleFamily.LEGENDRE:
            raise ValueError("only Legendre rules can be mapped to an interval")
        half = 0.5 * (b - a)
        return Rule1D(0.5 * (a + b) + half * self.nodes, half * self.weights, self.family)

    def integrate(self, f: Callable) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _jacobi(family: RuleFamily, m: int):
    k = np.arange(1, m, dtype=float)
    if family is RuleFamily.HERMITE:
        return np.zeros(m), np.sqrt(k), 1.0
    if family is RuleFamily.LAGUERRE:
        return 2.0 * np.arange(m) + 1.0, k, 1.0
    return np.zeros(m), k / np.sqrt(4.0 * k * k - 1.0), 2.0


@lru_cache(maxsize=None)
def _gauss(family: RuleFamily, m: int):
    alpha, beta, mass = _jacobi(family, m)
    if m == 1:
        x = alpha.copy()
    else:
        x = eigh_tridiagonal(alpha, beta, eigvals_only=True)
    if family is not RuleFamily.LAGUERRE:
        x = 0.5 * (x - x[::-1])
        if m % 2:
            x[m // 2] = 0.0
    # Christoffel function: w_i = 1 / sum_j p_j(x_i)^2 with orthonormal p_j
    p_prev = np.zeros_like(x)
    p = np.full_like(x, 1.0 / math.sqrt(mass))
    total = p * p
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(m - 1):
            p_next = ((x - alpha[j]) * p - (beta[j - 1] if j else 0.0) * p_prev) / beta[j]
            p_prev, p = p, p_next
            total = total + p * p
        w = 1.0 / total
    w = np.where(np.isfinite(w), w, 0.0)
    if family is not RuleFamily.LAGUERRE:
        w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(family, m: int) -> Rule1D:
    """``m``-point Gauss rule of the given family (exact to degree ``2m - 1``)."""
    family = RuleFamily(family)
    if int(m) != m or not 1 <= m <= MAX_POINTS:
        raise ValueError(f"number of points must be in 1..{MAX_POINTS}, got {m}")
    x, w = _gauss(family, int(m))
    return Rule1D(x, w, family)


def default_level_map(k: int) -> int:
    """Points of the level-``k`` Hermite rule: 1, 3, 5, 9, 17, ..."""
    return 1 if k <= 1 else 2 ** (k - 1) + 1


def tensor_quadrature(f: Callable, beta, level_map: Callable[[int], int] = default_level_map) -> float:
    """Full tensor Gauss-Hermite quadrature with ``level_map(beta_i)`` points per axis."""
    beta = tuple(int(b) for b in beta)
    rules = [gauss_rule(RuleFamily.HERMITE, level_map(b)) for b in beta]
    pts = np.array(list(itertools.product(*[r.nodes for r in rules])))
    wts = np.prod(np.array(list(itertools.product(*[r.weights for r in rules]))), axis=1)
    return float(np.dot(wts, np.asarray(f(pts), dtype=float)))


@dataclass
class AdaptiveState:
    """Book-keeping of one adaptive sparse-grid run."""

    dim: int
    level_map: Callable[[int], int] = default_level_map
    old: set = field(default_factory=set)
    active: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)
    q_cache: dict = field(default_factory=dict)
    f_cache: dict = field(default_factory=dict)
    n_evals: int = 0
    budget_exhausted: bool = False
    converged: bool = False
    history: list = field(default_factory=list)

    @property
    def index_set(self) -> set:
        return self.old | set(self.active)

    @property
    def estimate(self) -> float:
        return math.fsum(self.delta[b] for b in self.index_set)

    @property
    def front_error(self) -> float:
        return math.fsum(abs(v) for v in self.active.values())

    def is_admissible(self, beta) -> bool:
        return all(
            tuple(b - (j == i) for j, b in enumerate(beta)) in self.old
            for i in range(self.dim) if beta[i] > 1
        )

    def _grid(self, beta):
        axes = [i for i, b in enumerate(beta) if b > 1]
        rules = [gauss_rule(RuleFamily.HERMITE, self.level_map(beta[i])) for i in axes]
        return axes, rules

    def new_points(self, beta) -> int:
        """Number of function evaluations needed for ``Q^beta`` beyond the cache."""
        if beta in self.q_cache:
            return 0
        axes, rules = self._grid(beta)
        count = 0
        for node in itertools.product(*[r.nodes for r in rules]):
            z = np.zeros(self.dim)
            z[axes] = node
            count += z.tobytes() not in self.f_cache
        return count

    def quadrature(self, f: Callable, beta) -> float:
        if beta in self.q_cache:
            return self.q_cache[beta]
        axes, rules = self._grid(beta)
        nodes = list(itertools.product(*[r.nodes for r in rules]))
        weights = np.prod(np.array(list(itertools.product(*[r.weights for r in rules]))), axis=1) \
            if rules else np.ones(1)
        pts = np.zeros((len(nodes), self.dim))
        if axes:
            pts[:, axes] = np.array(nodes)
        keys = [p.tobytes() for p in pts]
        todo = [i for i, k in enumerate(keys) if k not in self.f_cache]
        if todo:
            new = np.asarray(f(pts[todo]), dtype=float).reshape(-1)
            if not np.all(np.isfinite(new)):
                bad = todo[int(np.flatnonzero(~np.isfinite(new))[0])]
                raise FloatingPointError(f"non-finite integrand value at {pts[bad]}")
            for i, v in zip(todo, new):
                self.f_cache[keys[i]] = v
            self.n_evals += len(set(keys[i] for i in todo))
        vals = np.array([self.f_cache[k] for k in keys])
        q = math.fsum(weights * vals)
        self.q_cache[beta] = q
        return q


def delta_q(f: Callable, beta, state: AdaptiveState) -> float:
    """Hierarchical surplus ``(prod_i Delta_i) Q^beta`` by inclusion-exclusion over corners."""
    beta = tuple(int(b) for b in beta)
    if beta in state.delta:
        return state.delta[beta]
    axes = [i for i, b in enumerate(beta) if b > 1]
    total = []
    for s in itertools.product((0, 1), repeat=len(axes)):
        corner = list(beta)
        for i, si in zip(axes, s):
            corner[i] -= si
        total.append((-1) ** sum(s) * state.quadrature(f, tuple(corner)))
    dq = math.fsum(total)
    state.delta[beta] = dq
    return dq


def asgq(f: Callable, dim: int, budget: int = 1000, tol: float = 0.0,
         level_map: Callable[[int], int] = default_level_map,
         work_normalized: bool = False, max_level: int = 9):
    """Dimension-adaptive sparse-grid integral of ``f`` against the standard normal density.

    ``f`` maps an ``(n, dim)`` array to ``n`` values. Refinement stops when
    the sum of active surpluses drops below ``tol`` or when admitting the
    next index would exceed ``budget`` evaluations; the latter sets
    ``state.budget_exhausted`` rather than raising.

    Returns ``(estimate, state)``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    state = AdaptiveState(dim, level_map)
    root = (1,) * dim
    if state.new_points(root) > budget:
        state.budget_exhausted = True
        return float("nan"), state
    state.active[root] = delta_q(f, root, state)
    state.history.append((state.n_evals, state.estimate))

    def profit(b):
        p = abs(state.active[b])
        if work_normalized:
            p /= max(1, math.prod(level_map(x) for x in b))
        return p

    while state.active:
        if tol > 0 and state.front_error <= tol:
            state.converged = True
            break
        best = max(state.active, key=lambda b: (profit(b), tuple(-x for x in b)))
        candidates = []
        for i in range(dim):
            nb = tuple(b + (j == i) for j, b in enumerate(best))
            if nb[i] > max_level or nb in state.active or nb in state.old:
                continue
            candidates.append(nb)
        state.old.add(best)
        dq_best = state.active.pop(best)
        admissible = [nb for nb in candidates if state.is_admissible(nb)]
        cost = 0
        for nb in admissible:
            cost += state.new_points(nb)
        if state.n_evals + cost > budget:
            # give the index back: the estimate is unchanged, refinement stops
            state.old.discard(best)
            state.active[best] = dq_best
            state.budget_exhausted = True
            break
        for nb in admissible:
            state.active[nb] = delta_q(f, nb, state)
        state.history.append((state.n_evals, state.estimate))
    return state.estimate, state


def first_difference_profile(f: Callable, dim: int, direction: int, k_max: int,
                             level_map: Callable[[int], int] = default_level_map) -> np.ndarray:
    """``|dQ^{1 + k e_i}|`` for ``k = 1..k_max`` along one axis."""
    if not 0 <= direction < dim:
        raise ValueError(f"direction {direction} outside 0..{dim - 1}")
    state = AdaptiveState(dim, level_map)
    out = []
    for k in range(1, k_max + 1):
        beta = tuple(1 + k * (j == direction) for j in range(dim))
        out.append(abs(delta_q(f, beta, state)))
    return np.array(out)
