"""Reference prices used to measure errors.

Black-Scholes closed forms for single-asset GBM, a characteristic-function
integral for Heston, and a control-variate Monte Carlo value (cached on
disk) for the lognormal basket.
"""
from __future__ import annotations

import json
import math
import os
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .models import GbmSpec, HestonSpec
from .payoffs import PayoffKind, PayoffSpec


def bs_call(s0: float, K: float, sigma: float, T: float = 1.0, r: float = 0.0) -> float:
    sd = sigma * math.sqrt(T)
    d1 = (math.log(s0 / K) + r * T) / sd + 0.5 * sd
    return s0 * norm.cdf(d1) - K * math.exp(-r * T) * norm.cdf(d1 - sd)


def bs_digital(s0: float, K: float, sigma: float, T: float = 1.0, r: float = 0.0) -> float:
    """Undiscounted ``P(S_T >= K)``."""
    sd = sigma * math.sqrt(T)
    return float(norm.cdf((math.log(s0 / K) + r * T) / sd - 0.5 * sd))


def heston_cf(u, spec: HestonSpec, T: float = 1.0):
    """Characteristic function of ``log S_T`` in the branch-cut-safe form."""
    u = np.asarray(u, dtype=complex)
    k, th, xi, rho, v0 = spec.kappa, spec.theta, spec.xi, spec.rho, spec.v0
    b = k - rho * xi * 1j * u
    d = np.sqrt(b * b + xi * xi * (1j * u + u * u))
    g = (b - d) / (b + d)
    e = np.exp(-d * T)
    C = k * th / xi**2 * ((b - d) * T - 2.0 * np.log((1.0 - g * e) / (1.0 - g)))
    D = (b - d) / xi**2 * (1.0 - e) / (1.0 - g * e)
    return np.exp(1j * u * (math.log(spec.s0) + spec.mu * T) + C + D * v0)


def _heston_probability(spec: HestonSpec, K: float, T: float, shift: bool) -> float:
    lk = math.log(K)
    norm_ = heston_cf(-1j, spec, T) if shift else 1.0

    def integrand(u):
        phi = heston_cf(u - 1j, spec, T) / norm_ if shift else heston_cf(u, spec, T)
        return float(np.real(np.exp(-1j * u * lk) * phi / (1j * u)))

    val, _ = integrate.quad(integrand, 1e-12, np.inf, limit=2000, epsabs=1e-13, epsrel=1e-12)
    return 0.5 + val / math.pi


def heston_digital(spec: HestonSpec, K: float, T: float = 1.0) -> float:
    return _heston_probability(spec, K, T, shift=False)


def heston_call(spec: HestonSpec, K: float, T: float = 1.0) -> float:
    fwd = spec.s0 * math.exp(spec.mu * T)
    return fwd * _heston_probability(spec, K, T, shift=True) - K * _heston_probability(spec, K, T, shift=False)


def _cache_dir() -> Path:
    return Path(os.environ.get("SMOOTHQUAD_CACHE", Path.home() / ".cache" / "smoothquad"))


@lru_cache(maxsize=8)
def basket_call_reference(x0: float, sigma: float, rho: float, d: int, K: float, T: float = 1.0,
                          n_samples: int = 10**7, seed: int = 2021) -> tuple[float, float]:
    """Equicorrelated driftless lognormal basket call with equal weights ``1/d``.

    Exact terminal sampling with the geometric-average call as control
    variate. Returns ``(value, 95% half-width)`` and caches it on disk.
    """
    key = f"basket_{x0}_{sigma}_{rho}_{d}_{K}_{T}_{n_samples}_{seed}"
    path = _cache_dir() / "references.json"
    try:
        table = json.loads(path.read_text())
    except (OSError, ValueError):
        table = {}
    if key in table:
        return tuple(table[key])
    corr = np.full((d, d), rho) + (1 - rho) * np.eye(d)
    chol = np.linalg.cholesky(corr)
    # geometric average is lognormal with these moments
    var_g = sigma**2 * T * corr.sum() / d**2
    mean_g = math.log(x0) - 0.5 * sigma**2 * T
    g_exact = (math.exp(mean_g + 0.5 * var_g) * norm.cdf((mean_g - math.log(K)) / math.sqrt(var_g) + math.sqrt(var_g))
               - K * norm.cdf((mean_g - math.log(K)) / math.sqrt(var_g)))
    rng = np.random.default_rng(seed)
    sums = np.zeros(5)
    done = 0
    while done < n_samples:
        m = min(10**6, n_samples - done)
        w = rng.standard_normal((m, d)) @ chol.T
        logs = math.log(x0) - 0.5 * sigma**2 * T + sigma * math.sqrt(T) * w
        arith = np.maximum(np.exp(logs).mean(axis=1) - K, 0.0)
        geo = np.maximum(np.exp(logs.mean(axis=1)) - K, 0.0)
        sums += [arith.sum(), geo.sum(), (arith * geo).sum(), (geo * geo).sum(), (arith * arith).sum()]
        done += m
    n = n_samples
    ma, mg = sums[0] / n, sums[1] / n
    cov = sums[2] / n - ma * mg
    vg = sums[3] / n - mg * mg
    va = sums[4] / n - ma * ma
    beta = cov / vg
    value = ma - beta * (mg - g_exact)
    var = max(va - cov * cov / vg, 0.0)
    out = (float(value), float(1.959963984540054 * math.sqrt(var / n)))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table[key] = out
        path.write_text(json.dumps(table, indent=1))
    except OSError:
        pass
    return out


def reference_price(model, payoff: PayoffSpec, T: float = 1.0) -> float | None:
    """Exact (or high-accuracy) price of the continuous-time problem when one is available."""
    if isinstance(model, GbmSpec):
        if model.d == 1 and payoff.d == 1 and np.all(model.drift == 0):
            s0, sig = float(model.x0[0]), float(model.sigma[0])
            if payoff.kind is PayoffKind.INDICATOR and payoff.sign > 0:
                return bs_digital(s0, payoff.strike, sig, T)
            if payoff.kind is PayoffKind.POSITIVE_PART:
                call = bs_call(s0, payoff.strike, sig, T)
                return call if payoff.sign > 0 else call - s0 + payoff.strike
        corr = model.corr
        off = corr[~np.eye(model.d, dtype=bool)]
        if (payoff.kind is PayoffKind.POSITIVE_PART and payoff.sign > 0 and np.all(model.drift == 0)
                and np.ptp(model.x0) == 0 and np.ptp(model.sigma) == 0 and np.ptp(off) == 0
                and np.allclose(payoff.weights, 1.0 / model.d)):
            return basket_call_reference(float(model.x0[0]), float(model.sigma[0]), float(off[0]), model.d,
                                         float(payoff.strike), T)[0]
        return None
    if isinstance(model, HestonSpec) and payoff.sign > 0:
        if payoff.kind is PayoffKind.INDICATOR:
            return heston_digital(model, payoff.strike, T)
        return heston_call(model, payoff.strike, T)
    return None
