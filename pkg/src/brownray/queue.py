"""Reconstruction of a queue's hidden net input and lost output from sampled
queue lengths.

The conditional laws of the next net-input increment (``H``, given both
queue endpoints) and of the next queue length (``F``, given the current one)
are estimated by Monte Carlo: continuations of the net input over one unit
of time are drawn from the fitted ray system given the window state, pushed
through the one-sided regulator, and conditioned on the observed endpoint by
a band around it.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConstraintViolation, InsufficientPaths, NonConvergence
from .estimate import HistorySelection, fit_at
from .model import RaySystem, ray_covariance
from .simulate import QueueTrace, regulate_batch

__all__ = [
    "ConditionalLawEstimate",
    "LatentReconstruction",
    "MCConfig",
    "QueueTrace",
    "build_conditioning_state",
    "expected_lost_output",
    "expected_net_input",
    "expected_queue_increment",
    "mc_conditional_F",
    "mc_conditional_H",
    "queue_relevant_history",
    "tobit_iterate",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MCConfig:
    paths: int = 5000
    refinement: int = 16
    bandwidth: float | None = None  # None: bandwidth_scale * std of Q(M+1)
    bandwidth_scale: float = 0.25
    min_band: int = 200
    adaptive: bool = True  # widen the band until min_band paths fall in it
    tol: float | None = None  # None: 1e-3 * std of queue differences
    max_iter: int = 50
    seed: int = 0
    workers: int | None = None  # None: BROWNRAY_THREADS, 0 = serial

    def n_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        return int(os.environ.get("BROWNRAY_THREADS", "0") or 0)


@dataclass(frozen=True, eq=False)
class ConditionalLawEstimate:
    """Empirical conditional law.

    For ``kind="H"`` the samples are net-input increments of the paths whose
    end point fell within ``bandwidth`` of the observed ``q``, each pinned to
    that end point: ``q - v - lost``.  Support is therefore bounded by
    ``support_bound = q - v`` with an atom there of mass ``atom_mass`` (paths
    that lost no output).  For ``kind="F"`` the samples are end points
    ``Q(M+1)``, supported on ``[0, inf)``.
    """

    kind: str
    samples: np.ndarray
    support_bound: float
    atom_mass: float | None = None
    bandwidth: float | None = None
    lost: np.ndarray | None = None
    raw_increments: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.samples)

    def mean(self) -> float:
        if self.kind == "H" and self.lost is not None:
            # bound minus a nonnegative mean stays <= bound after rounding
            return float(self.support_bound - np.mean(self.lost))
        return float(np.mean(self.samples))

    def standard_error(self) -> float:
        n = len(self.samples)
        return float(np.std(self.samples, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")

    def cdf(self, x) -> np.ndarray:
        s = np.sort(self.samples)
        return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / len(s)


@dataclass(frozen=True, eq=False)
class LatentReconstruction:
    """Result of the Tobit-like iteration at horizon ``M``.

    ``p1`` covers increments ``1..N``; ``lost``, ``lost_se`` and ``x_vectors``
    cover the reconstructed steps ``M+1..N``.
    """

    p1: np.ndarray
    lost: np.ndarray
    lost_se: np.ndarray
    x_vectors: np.ndarray
    iterations: int
    converged: bool
    horizon: int
    max_change: float


def build_conditioning_state(p1, covariates, rho_hat: float, k_hat, M: int, r: int) -> np.ndarray:
    """Window state ``x(r)`` for the window of ``M`` increments starting at
    1-based index ``r``.

    ``x_i`` is the covariate window sum, ``x_1`` the observed window sum minus
    ``rho_hat * M`` and the weighted covariate sums.
    """
    p1 = np.asarray(p1, dtype=float)
    k_hat = np.atleast_1d(np.asarray(k_hat, dtype=float))
    K = len(k_hat)
    lo, hi = r - 1, r - 1 + M
    x = np.empty(K)
    if K > 1:
        c = np.asarray(covariates, dtype=float).reshape(len(p1), -1)
        x[1:] = c[lo:hi].sum(axis=0)
    x[0] = p1[lo:hi].sum() - rho_hat * M - np.dot(k_hat[1:], x[1:])
    return x


def _forward_law(system: RaySystem, x):
    """Mean and variance of the next unit net-input increment ``Z(M+1) - Z(M)``
    given the component states, and the bridge variance rate."""
    M = system.horizon
    mean = system.rho
    var = 0.0
    for c, xi in zip(system.components, x):
        rmm = ray_covariance(c, M, M)
        rm1 = ray_covariance(c, M, M + 1)
        r11 = ray_covariance(c, M + 1, M + 1)
        mean += c.weight * (rm1 / rmm - 1.0) * xi
        var += c.weight**2 * (r11 - rm1**2 / rmm)
    return mean, max(var, 0.0), system.Theta


def _continuations(system: RaySystem, x, v: float, paths: int, refinement: int, seed):
    """Draw regulated continuations over one unit of time.

    Returns end points ``Q(M+1)``, net-input increments and lost output.
    The normals depend only on ``seed``, so repeated calls with the same seed
    and different parameters use common random numbers.
    """
    rng = np.random.default_rng(seed)
    mean, var, rate = _forward_law(system, x)
    R = refinement
    z_end = rng.standard_normal(paths)
    steps = rng.standard_normal((paths, R)) * np.sqrt(rate / R)
    w = np.concatenate([np.zeros((paths, 1)), np.cumsum(steps, axis=1)], axis=1)
    s = np.linspace(0.0, 1.0, R + 1)
    d = mean + np.sqrt(var) * z_end
    dz = d[:, None] * s + (w - s * w[:, -1:])
    dz[:, -1] = d
    q, lost = regulate_batch(v, dz)
    return q[:, -1], d, lost[:, -1]


def mc_conditional_F(system: RaySystem, x, v: float, paths: int = 5000, refinement: int = 16,
                     seed=0) -> ConditionalLawEstimate:
    """Empirical law of the next queue length given the state and ``Q(M) = v``."""
    if v < 0:
        raise ValueError("queue length must be nonnegative")
    q_end, dz, lost = _continuations(system, x, v, paths, refinement, seed)
    return ConditionalLawEstimate("F", q_end, 0.0, None, None, lost, dz)


def _band(q_end, q, bandwidth, min_band, adaptive):
    width = bandwidth
    sel = np.abs(q_end - q) <= width
    if adaptive:
        while sel.sum() < min_band and width < 1e6 * max(bandwidth, 1e-12):
            width *= 2.0
            sel = np.abs(q_end - q) <= width
    return sel, width


def mc_conditional_H(system: RaySystem, x, v: float, q: float, bandwidth: float | None = None,
                     paths: int = 5000, refinement: int = 16, seed=0, min_band: int = 200,
                     adaptive: bool = False, bandwidth_scale: float = 0.25) -> ConditionalLawEstimate:
    """Empirical law of the net-input increment given ``Q(M) = v`` and ``Q(M+1) = q``.

    Raises
    ------
    InsufficientPaths
        Fewer than ``min_band`` simulated end points within ``bandwidth`` of
        ``q`` (only when ``adaptive`` is false).
    """
    if v < 0 or q < 0:
        raise ValueError("queue lengths must be nonnegative")
    q_end, dz, lost = _continuations(system, x, v, paths, refinement, seed)
    if bandwidth is None:
        bandwidth = bandwidth_scale * float(np.std(q_end))
        if bandwidth <= 0:
            bandwidth = 1e-12
    sel, width = _band(q_end, q, bandwidth, min_band, adaptive)
    count = int(sel.sum())
    if count < min_band:
        raise InsufficientPaths(
            f"only {count} of {paths} paths ended within {width:g} of q={q:g}; "
            "increase paths or bandwidth",
            count,
        )
    lost_sel = lost[sel]
    samples = (q - v) - lost_sel
    return ConditionalLawEstimate(
        "H", samples, q - v, float(np.mean(lost_sel == 0.0)), width, lost_sel, dz[sel]
    )


def expected_net_input(H: ConditionalLawEstimate) -> float:
    return H.mean()


def expected_lost_output(H: ConditionalLawEstimate, q_diff: float) -> float:
    """``q_diff - E_H[V]``: expected lost output over the step."""
    return float(q_diff - expected_net_input(H))


def expected_queue_increment(F: ConditionalLawEstimate, v: float) -> float:
    """Mean of ``Q(M+1) - v``; the next queue length is predicted as ``v`` plus this."""
    return float(np.mean(F.samples) - v)


def _step_seed(seed: int, r: int) -> np.random.SeedSequence:
    # no iteration index: every iteration reuses the same normals for step r
    return np.random.SeedSequence([int(seed), int(r)])


def _fit(trace: QueueTrace, p1, M):
    if trace.covariates is None:
        v = p1[:, None]
    else:
        v = np.column_stack([p1, trace.covariates])
    return fit_at(v, M)


def _map(fn, items, workers):
    if workers and workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def tobit_iterate(trace: QueueTrace, M: int, config: MCConfig = MCConfig(), strict: bool = False):
    """Tobit-like fixed point for the hidden net-input increments.

    Starts from ``p_n = q_n - q_{n-1}``; each sweep fits the ray system to the
    current increments at horizon ``M``, then replaces every ``p_{M+r}`` by the
    expected net input given the window state and both queue endpoints.
    Stops when no increment moves by more than ``config.tol``.

    Returns ``(LatentReconstruction, RaySystem)``.  When the iteration cap is
    hit the last iterate is returned with ``converged=False`` (or
    :class:`NonConvergence` is raised if ``strict``).
    """
    q = trace.q
    N = trace.N
    if N <= M + 2:
        raise ValueError(f"trace too short for horizon {M}")
    dq = np.diff(q)
    tol = config.tol if config.tol is not None else 1e-3 * float(np.std(dq))
    p1 = dq.copy()
    steps = np.arange(1, N - M + 1)
    workers = config.n_workers()
    lost = np.zeros(len(steps))
    lost_se = np.zeros(len(steps))
    xs = np.zeros((len(steps), trace.K))
    converged = False
    change = float("inf")
    system = None
    it = 0
    for it in range(1, config.max_iter + 1):
        system, fit, moments = _fit(trace, p1, M)
        k_hat = system.weights

        def one(r, p1=p1, system=system, k_hat=k_hat, rho=moments.rho_hat):
            x = build_conditioning_state(p1, trace.covariates, rho, k_hat, M, r)
            H = mc_conditional_H(
                system, x, q[M + r - 1], q[M + r], config.bandwidth, config.paths,
                config.refinement, _step_seed(config.seed, r), config.min_band,
                config.adaptive, config.bandwidth_scale,
            )
            # E_H[V] = (q - v) - E[lost]; keeping E[lost] itself makes it exactly >= 0
            return x, float(np.mean(H.lost)), float(np.std(H.lost) / np.sqrt(H.count))

        results = _map(one, steps, workers)
        new = p1.copy()
        for j, (x, l, se) in enumerate(results):
            xs[j] = x
            lost[j] = l
            new[M + j] = dq[M + j] - l
            lost_se[j] = se
        change = float(np.max(np.abs(new - p1)))
        p1 = new
        if change < tol:
            converged = True
            break
    recon = LatentReconstruction(p1, lost, lost_se, xs.copy(), it, converged, M, change)
    if not converged:
        msg = f"no convergence after {it} iterations (max change {change:.3g} > tol {tol:.3g})"
        if strict:
            raise NonConvergence(msg, (recon, system))
        warnings.warn(msg, stacklevel=2)
    # the returned system is the fit to the final increments
    try:
        system = _fit(trace, p1, M)[0]
    except ConstraintViolation:
        logger.info("final refit rejected; returning the fit from the last sweep")
    return recon, system


def predict_queue(trace: QueueTrace, recon: LatentReconstruction, system: RaySystem,
                  config: MCConfig, targets) -> np.ndarray:
    """Predicted ``q_t`` for 1-based target indices ``t > M``: ``v`` plus the
    expected queue increment under ``F``."""
    M = recon.horizon
    q = trace.q
    fit_rho = system.rho
    k_hat = system.weights

    def one(t):
        r = t - M
        x = build_conditioning_state(recon.p1, trace.covariates, fit_rho, k_hat, M, r)
        v = q[t - 1]
        F = mc_conditional_F(system, x, v, config.paths, config.refinement,
                             np.random.SeedSequence([int(config.seed), int(r), 1]))
        return v + expected_queue_increment(F, v)

    return np.array(_map(one, list(targets), config.n_workers()))


@dataclass(frozen=True, eq=False)
class QueueHistory:
    selection: HistorySelection
    fits: dict  # M -> (LatentReconstruction, RaySystem) or None when inapt


def queue_relevant_history(trace: QueueTrace, m_max: int, config: MCConfig = MCConfig()) -> QueueHistory:
    """Pick the queue's relevant history by the adjusted mean squared residual
    of the one-step queue predictions.

    All candidates predict the same targets ``q_{m_max+1} .. q_N``; the
    divisor is ``N - m_max - 2``.  Horizons at which the ray model is inapt
    score inf.
    """
    N = trace.N
    if N <= m_max + 2:
        raise ValueError("trace too short for m_max")
    targets = np.arange(m_max + 1, N + 1)
    scores, fits = {}, {}
    for M in range(1, m_max + 1):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                recon, system = tobit_iterate(trace, M, config)
        except ConstraintViolation as exc:
            logger.info("horizon %d rejected: %s", M, exc)
            scores[M] = float("inf")
            fits[M] = None
            continue
        pred = predict_queue(trace, recon, system, config, targets)
        scores[M] = float(np.sum((trace.q[targets] - pred) ** 2) / (N - m_max - 2))
        fits[M] = (recon, system)
    finite = {m: s for m, s in scores.items() if np.isfinite(s)}
    if not finite:
        raise ConstraintViolation(["no_admissible_horizon"], "the ray model is inapt at every horizon")
    best = min(finite, key=lambda m: (finite[m], m))
    return QueueHistory(HistorySelection(m_max, scores, best), fits)


def with_overrides(config: MCConfig, **kw) -> MCConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
