"""Monte Carlo and randomly shifted rank-1 lattice estimators of Gaussian expectations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np
from scipy.special import ndtri

Z95 = 1.959963984540054


class ConfigError(ValueError):
    pass


@dataclass
class Estimate:
    """Point estimate with its error indicator and work.

    ``stat_error`` is the 95% CI half-width for MC/rQMC and the remaining
    front surplus for ASGQ. ``components`` optionally splits the error
    into ``bias``, ``smoothing`` and ``quadrature`` parts.
    """

    value: float
    stat_error: float = 0.0
    work: int = 0
    method: str = ""
    components: dict | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stat_error >= 0:
            raise ValueError("stat_error must be nonnegative")


@dataclass(frozen=True)
class McConfig:
    n_samples: int
    seed: int = 0
    batch_size: int = 2**16

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


@lru_cache(maxsize=1)
def default_generating_vector() -> np.ndarray:
    text = resources.files("smoothquad").joinpath("data/lattice_vector.txt").read_text()
    z = np.array([int(line) for line in text.split("\n") if line.strip() and not line.startswith("#")],
                 dtype=np.int64)
    z.setflags(write=False)
    return z


LATTICE_MAX_POINTS = 2**20


@dataclass(frozen=True)
class LatticeConfig:
    n_points: int
    n_shifts: int = 30
    seed: int = 0
    generating_vector: tuple | None = None

    def __post_init__(self):
        n = self.n_points
        if n < 1 or n & (n - 1):
            raise ConfigError(f"n_points must be a power of two, got {n}")
        if n > LATTICE_MAX_POINTS and self.generating_vector is None:
            raise ConfigError(f"the embedded lattice has at most {LATTICE_MAX_POINTS} points per shift")
        if self.n_shifts < 2:
            raise ConfigError("n_shifts must be >= 2 for an error estimate")

    def vector(self, dim: int) -> np.ndarray:
        z = np.asarray(self.generating_vector if self.generating_vector is not None
                       else default_generating_vector(), dtype=np.int64)
        if dim > z.size:
            raise ConfigError(f"dimension {dim} exceeds the generating vector length {z.size}")
        z = z[:dim] % self.n_points if self.n_points > 1 else np.zeros(dim, dtype=np.int64)
        if self.n_points > 1 and np.any(z % 2 == 0):
            raise ConfigError("generating vector entries must be odd")
        return z


def inverse_normal_cdf(u):
    """Standard normal quantile for ``0 < u < 1``."""
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0) | ~(u < 1)):
        raise ValueError("inverse_normal_cdf needs 0 < u < 1")
    x = ndtri(u)
    return x if x.ndim else float(x)


def _check_values(vals, offset: int = 0):
    vals = np.asarray(vals, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError(f"non-finite sample at index {offset + int(np.flatnonzero(~np.isfinite(vals))[0])}")
    return vals


def batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(batch,)))


def mc_estimate(f: Callable, dim: int, cfg: McConfig) -> Estimate:
    """Plain Monte Carlo mean of ``f`` over i.i.d. standard normal inputs."""
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    total = 0.0
    total_sq = 0.0
    done = 0
    b = 0
    while done < cfg.n_samples:
        m = min(cfg.batch_size, cfg.n_samples - done)
        z = batch_rng(cfg.seed, b).standard_normal((m, dim))
        vals = _check_values(f(z), done)
        total += math.fsum(vals)
        total_sq += math.fsum(vals * vals)
        done += m
        b += 1
    n = cfg.n_samples
    mean = total / n
    var = max(total_sq - n * mean * mean, 0.0) / (n - 1)
    # exact-constant integrands: kill roundoff in the variance
    if var <= 1e-28 * max(1.0, mean * mean):
        var = 0.0
    return Estimate(mean, Z95 * math.sqrt(var / n), n, "mc", info={"variance": var})


def lattice_points(cfg: LatticeConfig, dim: int, shift) -> np.ndarray:
    """Shifted lattice points ``frac(i z / n + shift)`` in ``[0, 1)^dim``."""
    z = cfg.vector(dim)
    i = np.arange(cfg.n_points, dtype=np.int64)[:, None]
    return np.mod((i * z % cfg.n_points) / cfg.n_points + shift, 1.0)


def rqmc_estimate(f: Callable, dim: int, cfg: LatticeConfig) -> Estimate:
    """Randomly shifted lattice rule mapped to Gaussian space by the inverse CDF."""
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    cfg.vector(dim)
    shifts = np.random.default_rng(cfg.seed).random((cfg.n_shifts, dim))
    means = np.empty(cfg.n_shifts)
    for s, shift in enumerate(shifts):
        u = lattice_points(cfg, dim, shift)
        u = np.clip(u, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
        means[s] = math.fsum(_check_values(f(inverse_normal_cdf(u)), s * cfg.n_points)) / cfg.n_points
    value = math.fsum(means) / cfg.n_shifts
    spread = float(np.std(means, ddof=1))
    if spread <= 1e-14 * max(1.0, abs(value)):
        spread = 0.0
    return Estimate(value, Z95 * spread / math.sqrt(cfg.n_shifts), cfg.n_points * cfg.n_shifts, "rqmc",
                    info={"shift_means": means})
