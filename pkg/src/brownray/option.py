"""Volatility estimation from a price series and European call pricing when
log prices follow a Brownian ray.

The pricing volatility is ``theta`` of the first component, the local
variance rate of the ray, which plays the role of ``sigma**2`` in the usual
Black-Scholes-Merton formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .errors import NegativeTheta, OutOfNoArbitrageBounds
from .estimate import build_second_moments, estimate_xi

__all__ = [
    "OptionSpec",
    "PriceSeries",
    "bsm_price",
    "estimate_theta_beta",
    "estimate_theta_xi",
    "implied_theta",
]


@dataclass(frozen=True, eq=False)
class PriceSeries:
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float).ravel()
        if s.size < 2:
            raise ValueError("need at least two prices")
        if not np.all(s > 0):
            raise ValueError("prices must be strictly positive")
        object.__setattr__(self, "s", s)

    @property
    def returns(self) -> np.ndarray:
        return np.diff(np.log(self.s))


@dataclass(frozen=True)
class OptionSpec:
    """European call: strike, risk-free rate, valuation time, expiry, spot."""

    strike: float
    rate: float
    t0: float
    t_e: float
    spot: float

    def __post_init__(self):
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.spot > 0:
            raise ValueError("spot must be positive")
        tau = self.t_e - self.t0
        if not 0 < tau <= 1:
            raise ValueError("expiry must lie in (t0, t0 + 1]")

    @property
    def tau(self) -> float:
        return self.t_e - self.t0


def _returns(returns) -> np.ndarray:
    if isinstance(returns, PriceSeries):
        return returns.returns
    return np.asarray(returns, dtype=float).ravel()


def _moments(returns, M):
    r = _returns(returns)
    if r.size <= M + 1:
        raise ValueError(f"need more than M+1={M + 1} returns")
    return build_second_moments(r[:, None], M)


def _positive(theta: float) -> float:
    if not theta > 0:
        raise NegativeTheta(f"estimated theta {theta:.6g} is not positive; the ray model is not apt", theta)
    return theta


def estimate_theta_beta(returns, M: int) -> float:
    """``gamma_11 (M+1)/M - beta_1`` from the sample covariances of log returns."""
    m = _moments(returns, M)
    g, b = m.gamma[0, 0], m.beta[0]
    return _positive(float(g * (M + 1) / M - b))


def estimate_theta_xi(returns, M: int) -> float:
    """``gamma_11 (M+1)/M - gamma_11 xi_1`` with ``xi_1`` from the fitted
    autoregression.  Algebraically the same as :func:`estimate_theta_beta`."""
    m = _moments(returns, M)
    g = m.gamma[0, 0]
    if not g > 0:
        raise NegativeTheta("returns have no variance", 0.0)
    xi1 = estimate_xi(m).xi[0]
    return _positive(float(g * (M + 1) / M - g * xi1))


def bsm_price(opt: OptionSpec, theta: float) -> float:
    """Call value with total log-price variance ``theta * tau``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    tau = opt.tau
    sd = np.sqrt(theta * tau)
    disc = opt.strike * np.exp(-opt.rate * tau)
    d1 = (np.log(opt.spot / opt.strike) + (opt.rate + 0.5 * theta) * tau) / sd
    return float(opt.spot * ndtr(d1) - disc * ndtr(d1 - sd))


def _bounds(opt: OptionSpec):
    return max(opt.spot - opt.strike * np.exp(-opt.rate * opt.tau), 0.0), opt.spot


def implied_theta(opt: OptionSpec, market_price: float, xtol: float = 1e-14) -> float:
    """Invert :func:`bsm_price` in ``theta``.

    A price at the lower no-arbitrage bound returns 0 (the zero-variance
    limit); prices outside ``[lower, spot)`` raise
    :class:`OutOfNoArbitrageBounds`.
    """
    lo_b, hi_b = _bounds(opt)
    w = float(market_price)
    slack = 1e-12 * max(opt.spot, 1.0)
    if not (lo_b - slack <= w < hi_b):
        raise OutOfNoArbitrageBounds(f"price {w:g} outside [{lo_b:g}, {hi_b:g})")
    if w - lo_b <= slack:
        return 0.0

    def f(th):
        return bsm_price(opt, th) - w

    lo, hi = 1e-16, 1.0
    while f(hi) < 0:
        hi *= 4.0
        if hi > 1e12:
            raise OutOfNoArbitrageBounds(f"price {w:g} needs an unbounded theta")
    if f(lo) > 0:
        return lo
    return float(brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))
