"""Brownian-ray parameterization and the map between ray parameters and
the second moments / autoregression coefficients that can be estimated.

A Brownian ray ``X`` with variance scale ``phi`` and time scale ``delta`` is
the zero-mean Gaussian process with covariance

    R(s, t) = phi * (s / delta) * (1 - t / delta) = s * (theta - tau * t),   s <= t

where ``theta = phi / delta`` and ``tau = phi / delta**2``.  A system is a
weighted superposition ``X = X1 + sum_i k_i X_i`` of independent rays whose
conditional law over a window of ``M`` unit steps (the relevant history) is
summarized by

* the volatility matrix ``Gamma`` of ``(X(M), X_2(M), ..., X_K(M))``, which
  has an arrow pattern (first row/column plus diagonal),
* the covariance row ``B`` of ``X(M + 1)`` with that vector, and
* the autoregression coefficients ``xi = B Gamma^-1``.

:func:`invert_moments` recovers the ``3K`` ray parameters from ``(Gamma, xi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConstraintViolation, SingularMatrix

DEFAULT_MARGIN = 1e-9

# Names of the admissibility constraints, in the order they are checked.
XI1_UNIT_INTERVAL = "xi1_in_unit_interval"
MIXED_UNIT_INTERVAL = "mixed_persistence_in_unit_interval"
POSITIVE_VARIANCES = "positive_variances"
NONZERO_CROSS = "nonzero_cross_covariances"
CORRELATION_SUM = "correlation_sum_below_one"


@dataclass(frozen=True)
class RayComponent:
    """One Brownian ray with its superposition weight."""

    phi: float
    delta: float
    weight: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise ValueError(f"phi must be positive and finite, got {self.phi}")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")
        if not np.isfinite(self.weight):
            raise ValueError("weight must be finite")

    @property
    def theta(self) -> float:
        return self.phi / self.delta

    @property
    def tau(self) -> float:
        return self.phi / self.delta**2


@dataclass(frozen=True)
class RaySystem:
    """Superposition of ``K`` independent rays with drift ``rho`` per unit time.

    ``horizon`` is the relevant history ``M``; every component must satisfy
    ``delta > M + 1`` so that the covariance is defined on the working
    window ``[0, M + 1]``.
    """

    components: tuple
    rho: float = 0.0
    horizon: int = 1

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) == 0:
            raise ValueError("a ray system needs at least one component")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))
        if comps[0].weight != 1.0:
            raise ValueError("the first component must have weight exactly 1")
        for i, c in enumerate(comps):
            if not c.delta > self.horizon + 1:
                raise ValueError(
                    f"component {i + 1}: delta={c.delta} must exceed horizon + 1 = {self.horizon + 1}"
                )

    @classmethod
    def from_arrays(cls, phi, delta, weights=None, rho=0.0, horizon=1):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        if weights is None:
            weights = np.ones_like(phi)
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if not (len(phi) == len(delta) == len(weights)):
            raise ValueError("phi, delta and weights must have the same length")
        comps = tuple(RayComponent(float(p), float(d), float(k)) for p, d, k in zip(phi, delta, weights))
        return cls(comps, float(rho), int(horizon))

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def phi(self) -> np.ndarray:
        return np.array([c.phi for c in self.components])

    @property
    def delta(self) -> np.ndarray:
        return np.array([c.delta for c in self.components])

    @property
    def Theta(self) -> float:
        return float(sum(c.weight**2 * c.theta for c in self.components))

    @property
    def T(self) -> float:
        return float(sum(c.weight**2 * c.tau for c in self.components))

    def with_horizon(self, horizon: int) -> "RaySystem":
        return RaySystem(self.components, self.rho, horizon)


@dataclass(frozen=True, eq=False)
class SecondMoments:
    """Estimated (or theoretical) volatility matrix, covariance row and drift.

    ``gamma`` is the ``K x K`` arrow matrix, ``beta`` the covariance of the
    ``(M + 1)``-window sum of the observed series with the ``M``-window state,
    ``rho_hat`` the drift per unit time.
    """

    gamma: np.ndarray
    beta: np.ndarray
    rho_hat: float = 0.0
    horizon: int = 1
    n_obs: int | None = None

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float, ndmin=2)
        beta = np.atleast_1d(np.array(self.beta, dtype=float))
        K = gamma.shape[0]
        if gamma.shape != (K, K) or beta.shape != (K,):
            raise ValueError("gamma must be K x K and beta length K")
        if not np.allclose(gamma, gamma.T, rtol=0, atol=0):
            raise ValueError("gamma must be symmetric")
        off = gamma[1:, 1:] - np.diag(np.diag(gamma[1:, 1:]))
        if np.any(off != 0):
            raise ValueError("gamma must have the arrow pattern (zero covariate cross terms)")
        gamma.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @property
    def K(self) -> int:
        return self.gamma.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Superposition weights implied by the moments, ``k_i = gamma_1i / gamma_ii``."""
        g = self.gamma
        k = np.ones(self.K)
        with np.errstate(divide="ignore", invalid="ignore"):
            k[1:] = g[0, 1:] / np.diag(g)[1:]
        return k


def xi_to_eta(xi, weights) -> np.ndarray:
    """Mean-reversion form: ``eta_1 = xi_1 - 1`` and ``eta_i = xi_i / k_i + eta_1``."""
    xi = np.asarray(xi, dtype=float)
    k = np.asarray(weights, dtype=float)
    eta = np.empty_like(xi)
    eta[0] = xi[0] - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        eta[1:] = xi[1:] / k[1:] + eta[0]
    return eta


def eta_to_xi(eta, weights) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    k = np.asarray(weights, dtype=float)
    xi = np.empty_like(eta)
    xi[0] = eta[0] + 1.0
    xi[1:] = k[1:] * (eta[1:] - eta[0])
    return xi


@dataclass(frozen=True, eq=False)
class ArFit:
    """Autoregression coefficients in their three equivalent forms.

    ``xi`` weights the window-sum state when predicting the ``(M + 1)``-window
    sum, ``eta`` is the per-component mean-reversion strength, and ``psi``
    weights the same state when predicting the next single increment:
    ``psi_1 = xi_1 - 1``, ``psi_i = xi_i`` and ``psi_{K+1}`` is the intercept.
    """

    xi: np.ndarray
    intercept: float
    weights: np.ndarray
    rho: float = 0.0
    horizon: int = 1
    constraints: dict = field(default_factory=dict)

    def __post_init__(self):
        xi = np.atleast_1d(np.array(self.xi, dtype=float))
        w = np.atleast_1d(np.array(self.weights, dtype=float))
        if xi.shape != w.shape:
            raise ValueError("xi and weights must have the same length")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "constraints", dict(self.constraints))

    @classmethod
    def from_eta(cls, eta, intercept, weights, rho=0.0, horizon=1, constraints=None):
        return cls(eta_to_xi(eta, weights), intercept, weights, rho, horizon, constraints or {})

    @property
    def K(self) -> int:
        return len(self.xi)

    @property
    def eta(self) -> np.ndarray:
        return xi_to_eta(self.xi, self.weights)

    @property
    def psi(self) -> np.ndarray:
        psi = np.empty(self.K + 1)
        psi[0] = self.xi[0] - 1.0
        psi[1 : self.K] = self.xi[1:]
        psi[self.K] = self.intercept
        return psi

    @property
    def accepted(self) -> bool:
        return all(self.constraints.values()) if self.constraints else True

    @property
    def drift_residual(self) -> float:
        """Intercept minus its population value ``rho * (1 - psi_1 * M)``."""
        return float(self.intercept - self.rho * (1.0 - (self.xi[0] - 1.0) * self.horizon))

    def predict_window(self, state) -> np.ndarray:
        """Predicted ``(M + 1)``-window sum given rows ``[w_1, w_2, ..., w_K]``."""
        state = np.atleast_2d(state)
        return self.intercept + state @ self.xi

    def predict_increment(self, state) -> np.ndarray:
        """Predicted next increment from the same state, using the ``psi`` form."""
        state = np.atleast_2d(state)
        psi = self.psi
        return psi[self.K] + state @ psi[: self.K]


def ray_covariance(component: RayComponent, s: float, t: float) -> float:
    """``E[X(s) X(t)]`` for a single ray; defined for ``0 <= s, t <= delta``."""
    if s > t:
        s, t = t, s
    if s < 0:
        raise ValueError("times must be nonnegative")
    if t > component.delta:
        raise ValueError(f"covariance undefined beyond the time scale delta={component.delta} (t={t})")
    return component.phi * (s / component.delta) * (1.0 - t / component.delta)


def superposed_covariance(system: RaySystem, s: float, t: float) -> float:
    return float(sum(c.weight**2 * ray_covariance(c, s, t) for c in system.components))


def volatility_blocks(system: RaySystem):
    """Theoretical ``(A, B, Gamma)`` blocks of the joint covariance of
    ``(X(M+1), X(M), X_2(M), ..., X_K(M))``.

    Built entry by entry from the covariance functions so the arrow pattern of
    ``Gamma`` holds exactly.
    """
    M = system.horizon
    K = system.K
    comps = system.components
    A = superposed_covariance(system, M + 1, M + 1)
    B = np.empty(K)
    G = np.zeros((K, K))
    B[0] = superposed_covariance(system, M, M + 1)
    G[0, 0] = superposed_covariance(system, M, M)
    for i in range(1, K):
        c = comps[i]
        rmm = ray_covariance(c, M, M)
        G[i, i] = rmm
        G[0, i] = G[i, 0] = c.weight * rmm
        B[i] = c.weight * ray_covariance(c, M, M + 1)
    return A, B, G


def theoretical_moments(system: RaySystem) -> SecondMoments:
    _, B, G = volatility_blocks(system)
    return SecondMoments(G, B, system.rho, system.horizon)


def conditional_moments(system: RaySystem):
    """Coefficients ``B Gamma^-1`` and variance ``A - B Gamma^-1 B^T`` of
    ``X(M + 1)`` given the window state.

    Solved densely; the estimation path uses the structured arrow inverse
    instead, so the two can check each other.
    """
    A, B, G = volatility_blocks(system)
    d = np.diag(G)
    if np.any(d <= np.finfo(float).tiny):
        raise SingularMatrix("volatility matrix has a vanishing diagonal entry")
    coef = np.linalg.solve(G, B)
    var = float(A - B @ coef)
    return coef, max(var, 0.0) if var > -1e-12 * abs(A) else var


def conditional_increment_drift(fit: ArFit, weights, x) -> float:
    """Expected next increment ``E[X(M+1) - X(M) | state] = sum_i eta_i k_i x_i``."""
    k = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(fit.eta * k * x))


def check_constraints(gamma, xi, margin: float = DEFAULT_MARGIN) -> dict:
    """Evaluate every admissibility constraint; returns ``{name: passed}``.

    Inequalities are strict with a safety ``margin`` so boundary fits (which
    would give infinite ``delta`` or zero ``phi``) are rejected.  The mixed
    persistence check gets one entry per covariate, suffixed with its
    1-based column number.
    """
    g = np.asarray(gamma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    K = len(xi)
    diag = np.diag(g)
    out = {XI1_UNIT_INTERVAL: bool(margin < xi[0] < 1.0 - margin)}
    out[POSITIVE_VARIANCES] = bool(np.all(diag > 0))
    cross = g[0, 1:]
    out[NONZERO_CROSS] = bool(np.all(cross != 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(1, K):
            z = xi[0] + xi[i] * diag[i] / cross[i - 1]
            out[f"{MIXED_UNIT_INTERVAL}_{i + 1}"] = bool(np.isfinite(z) and margin < z < 1.0 - margin)
        if K > 1:
            corr = float(np.sum(cross**2 / (g[0, 0] * diag[1:])))
            out[CORRELATION_SUM] = bool(np.isfinite(corr) and corr < 1.0 - margin)
        else:
            out[CORRELATION_SUM] = True
    return out


def invert_moments(moments: SecondMoments, fit: ArFit, horizon: int | None = None,
                   margin: float = DEFAULT_MARGIN) -> RaySystem:
    """Solve for the ray parameters reproducing ``Gamma`` and ``xi`` exactly.

    Raises
    ------
    ConstraintViolation
        If any admissibility constraint fails; the exception lists which.
    """
    M = moments.horizon if horizon is None else int(horizon)
    g = moments.gamma
    xi = fit.xi
    K = len(xi)
    if g.shape[0] != K:
        raise ValueError("moments and fit disagree on K")
    flags = check_constraints(g, xi, margin)
    failed = [name for name, ok in flags.items() if not ok]
    if failed:
        raise ConstraintViolation(failed)

    x1 = xi[0]
    delta = np.empty(K)
    phi = np.empty(K)
    k = np.ones(K)
    delta[0] = (1.0 + M - M * x1) / (1.0 - x1)
    residual_var = g[0, 0]
    for i in range(1, K):
        g1i, gii = g[0, i], g[i, i]
        k[i] = g1i / gii
        d = (1.0 - x1) * g1i - xi[i] * gii
        num = g1i + M * d
        delta[i] = num / d
        phi[i] = gii * num**2 / (M * g1i * d)
        residual_var -= g1i**2 / gii
    phi[0] = (1.0 + M * (1.0 - x1)) ** 2 / (M * (1.0 - x1)) * residual_var

    bad = [i + 1 for i in range(K) if not (delta[i] > M + 1 and phi[i] > 0)]
    if bad:
        raise ConstraintViolation(
            [f"postcondition_component_{i}" for i in bad],
            f"inverted parameters out of range for components {bad}",
        )
    return RaySystem.from_arrays(phi, delta, k, rho=moments.rho_hat, horizon=M)


def random_admissible(rng: np.random.Generator, K: int, horizon: int,
                      xi_range: Sequence[float] = (0.05, 0.95)):
    """Draw a random admissible ``(SecondMoments, ArFit)`` pair.

    Used by property tests and the acceptance suite to sweep the inversion.
    """
    lo, hi = xi_range
    diag = rng.uniform(0.2, 5.0, size=K)
    gamma = np.zeros((K, K))
    gamma[np.arange(K), np.arange(K)] = diag
    if K > 1:
        # squared correlations summing to at most 0.9
        share = rng.dirichlet(np.ones(K)) * rng.uniform(0.05, 0.9)
        corr = np.sqrt(share[1:]) * rng.choice([-1.0, 1.0], size=K - 1)
        gamma[0, 1:] = gamma[1:, 0] = corr * np.sqrt(diag[0] * diag[1:])
    xi = np.empty(K)
    xi[0] = rng.uniform(lo, hi)
    for i in range(1, K):
        z = rng.uniform(lo, hi)
        xi[i] = (z - xi[0]) * gamma[0, i] / gamma[i, i]
    moments = SecondMoments(gamma, xi @ gamma, 0.0, horizon)
    fit = ArFit(xi, 0.0, moments.weights, 0.0, horizon)
    return moments, fit
