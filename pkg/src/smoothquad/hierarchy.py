"""Hierarchical Gaussian coordinates.

Brownian bridge construction of path increments, the orthogonal rotation
that isolates the smoothing direction among the coarse (terminal-value)
coordinates, and the Haar level bookkeeping of the fine coordinates.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ShapeError(ValueError):
    """Input array does not have the shape implied by the grid."""


@dataclass(frozen=True)
class PathGrid:
    """Uniform time grid with ``n_steps`` intervals on ``[0, T]`` for ``d`` assets."""

    n_steps: int
    T: float = 1.0
    d: int = 1

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def is_dyadic(self) -> bool:
        return self.n_steps & (self.n_steps - 1) == 0

    def refine(self) -> "PathGrid":
        return PathGrid(2 * self.n_steps, self.T, self.d)


@dataclass(frozen=True)
class HaarLevelIndex:
    """Position of a bridge coordinate: level ``n`` (-1 for the terminal value) and offset ``k``."""

    n: int
    k: int = 0

    def __post_init__(self):
        if self.n < -1:
            raise ValueError("level must be >= -1")
        if self.n >= 0 and not 0 <= self.k < 2**self.n:
            raise ValueError(f"k={self.k} out of range for level {self.n}")

    def support(self, T: float = 1.0) -> tuple[float, float]:
        if self.n < 0:
            return 0.0, T
        h = T / 2**self.n
        return self.k * h, (self.k + 1) * h


@dataclass(frozen=True)
class HierarchicalCoords:
    """One Gaussian input vector split into smoothing, coarse and fine parts."""

    y1: float
    y_rest: np.ndarray
    z_rest: np.ndarray

    def __post_init__(self):
        y_rest = np.asarray(self.y_rest, dtype=float).reshape(-1)
        z_rest = np.asarray(self.z_rest, dtype=float)
        if z_rest.ndim != 2 or z_rest.shape[0] != y_rest.size + 1:
            raise ShapeError("z_rest must hold one row of fine coordinates per asset")
        object.__setattr__(self, "y_rest", y_rest)
        object.__setattr__(self, "z_rest", z_rest)
        if not (np.isfinite(self.y1) and np.all(np.isfinite(y_rest)) and np.all(np.isfinite(z_rest))):
            raise ValueError("coordinates must be finite")

    @property
    def d(self) -> int:
        return self.y_rest.size + 1

    @property
    def size(self) -> int:
        return 1 + self.y_rest.size + self.z_rest.size


@dataclass(frozen=True)
class RotationMatrix:
    A: np.ndarray

    @property
    def A_inv(self) -> np.ndarray:
        return self.A.T

    @property
    def direction(self) -> np.ndarray:
        return self.A[0]

    @property
    def d(self) -> int:
        return self.A.shape[0]


@lru_cache(maxsize=64)
def _rotation(d: int) -> np.ndarray:
    rows = [np.full(d, 1.0 / np.sqrt(d))]
    for i in range(1, d):
        v = np.zeros(d)
        v[i] = 1.0
        # two passes of modified Gram-Schmidt keep the basis orthonormal to ~1e-16
        for _ in range(2):
            for r in rows:
                v -= (r @ v) * r
        nrm = np.linalg.norm(v)
        if nrm < 1e-10:
            continue
        rows.append(v / nrm)
    A = np.array(rows)
    A.setflags(write=False)
    return A


def build_rotation(d: int) -> RotationMatrix:
    """Orthogonal ``d x d`` matrix whose first row is the normalised all-ones vector.

    The remaining rows come from Gram-Schmidt applied to ``e_2, ..., e_d``,
    which is deterministic and never degenerate because ``e_1`` is the
    skipped pivot.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    return RotationMatrix(_rotation(int(d)))


def bisection_order(n_steps: int) -> list[tuple[int, int, int]]:
    """Order in which a bridge fills the interior grid points.

    Returns ``(left, mid, right)`` grid indices, longest interval first and
    leftmost on ties. For dyadic grids this is level-major Haar order.
    """
    order = []
    heap = [(-n_steps, 0, n_steps)]
    while heap:
        neg_len, a, b = heapq.heappop(heap)
        if b - a < 2:
            continue
        m = (a + b) // 2
        order.append((a, m, b))
        heapq.heappush(heap, (-(m - a), a, m))
        heapq.heappush(heap, (-(b - m), m, b))
    return order


def haar_levels(n_steps: int) -> list[HaarLevelIndex]:
    """Haar index of every bridge coordinate, terminal value first.

    Only defined for dyadic grids.
    """
    if n_steps & (n_steps - 1):
        raise ValueError("Haar indexing needs a power-of-two number of steps")
    out = [HaarLevelIndex(-1, 0)]
    for i in range(n_steps - 1):
        n = int(np.floor(np.log2(i + 1)))
        out.append(HaarLevelIndex(n, i + 1 - 2**n))
    return out


@lru_cache(maxsize=128)
def _bridge_matrix(n_steps: int, T: float) -> np.ndarray:
    t = np.linspace(0.0, T, n_steps + 1)
    # W at grid points as linear functions of the N coordinates
    W = np.zeros((n_steps + 1, n_steps))
    W[n_steps, 0] = np.sqrt(T)
    for col, (a, m, b) in enumerate(bisection_order(n_steps), start=1):
        lam = (t[m] - t[a]) / (t[b] - t[a])
        sd = np.sqrt((t[m] - t[a]) * (t[b] - t[m]) / (t[b] - t[a]))
        W[m] = (1 - lam) * W[a] + lam * W[b]
        W[m, col] += sd
    L = np.diff(W, axis=0)
    L.setflags(write=False)
    return L


def bridge_matrix(grid: PathGrid) -> np.ndarray:
    """Matrix ``L`` with ``increments = L @ [z_coarse, z_fine...]``.

    ``L @ L.T == dt * I`` since the construction is exact in law.
    """
    return _bridge_matrix(grid.n_steps, float(grid.T))


def bridge_increments(grid: PathGrid, z_coarse, z_fine) -> np.ndarray:
    """Brownian increments over the grid from bridge coordinates.

    ``z_coarse`` has shape ``(...)`` and ``z_fine`` shape ``(..., N-1)``;
    the result has shape ``(..., N)`` and sums to ``sqrt(T) * z_coarse``.
    """
    z_coarse = np.asarray(z_coarse, dtype=float)
    z_fine = np.asarray(z_fine, dtype=float)
    if z_fine.ndim == 0 or z_fine.shape[-1] != grid.n_steps - 1:
        raise ShapeError(
            f"expected {grid.n_steps - 1} fine coordinates, got shape {z_fine.shape}"
        )
    shape = np.broadcast_shapes(z_coarse.shape, z_fine.shape[:-1])
    z = np.concatenate(
        [np.broadcast_to(z_coarse, shape)[..., None],
         np.broadcast_to(z_fine, shape + z_fine.shape[-1:])],
        axis=-1,
    )
    return z @ bridge_matrix(grid).T


def split_coords(all_gaussians, rot: RotationMatrix, grid: PathGrid) -> HierarchicalCoords:
    """Split a length ``d*N`` vector (asset-major, coarse first) into hierarchical parts."""
    z = np.asarray(all_gaussians, dtype=float).reshape(-1)
    d, N = grid.d, grid.n_steps
    if z.size != d * N or rot.d != d:
        raise ShapeError(f"expected {d * N} coordinates for d={d}, N={N}, got {z.size}")
    blocks = z.reshape(d, N)
    y = rot.A @ blocks[:, 0]
    return HierarchicalCoords(float(y[0]), y[1:], blocks[:, 1:])


def merge_coords(coords: HierarchicalCoords, rot: RotationMatrix) -> np.ndarray:
    """Inverse of :func:`split_coords`."""
    y = np.concatenate([[coords.y1], coords.y_rest])
    coarse = rot.A_inv @ y
    return np.column_stack([coarse, coords.z_rest]).reshape(-1)
