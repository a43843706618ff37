"""Estimators for drift, volatility matrix, covariance row and autoregression
coefficients from an increment panel, plus relevant-history selection.

Column indices are 0-based throughout: column 0 is the observed series
(uncentered, with drift), columns ``1..K-1`` are centered orthogonal
covariates.  Window sums use the first index ``r = 0 .. N-M-1``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolation, InsufficientData, SingularMatrix
from .model import (
    DEFAULT_MARGIN,
    ArFit,
    RaySystem,
    SecondMoments,
    check_constraints,
    invert_moments,
)
from .simulate import IncrementPanel

logger = logging.getLogger(__name__)

ESTIMATORS = ("dispersion", "overlapping")


def _values(panel) -> np.ndarray:
    v = panel.values if isinstance(panel, IncrementPanel) else np.asarray(panel, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v


def window_sums(x, length: int) -> np.ndarray:
    """All overlapping sums of ``length`` consecutive entries along axis 0."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    return c[length:] - c[:-length]


@dataclass(frozen=True, eq=False)
class WindowSums:
    """Window bookkeeping for horizon ``M``.

    ``w`` holds the ``M``-window sums of every column (column 0 uncentered),
    ``y`` the ``(M + 1)``-window sums of column 0; both are indexed by
    ``r = 0 .. N-M-1``.  ``y[r] - w[r, 0]`` is the increment that follows
    window ``r``.
    """

    w: np.ndarray
    y: np.ndarray
    horizon: int

    @classmethod
    def build(cls, panel, horizon: int) -> "WindowSums":
        v = _values(panel)
        N = v.shape[0]
        M = int(horizon)
        if N <= M:
            raise InsufficientData(f"need more than M={M} rows, got {N}")
        w = window_sums(v, M)[: N - M]
        y = window_sums(v[:, 0], M + 1)
        return cls(w, y, M)

    def centered(self, rho: float) -> tuple[np.ndarray, np.ndarray]:
        w = self.w.copy()
        w[:, 0] -= rho * self.horizon
        return w, self.y - rho * (self.horizon + 1)


def lag_covariance(panel, k: int, l: int, m: int, direction: str = "+") -> float:
    """Lag-``k`` cross covariance using ``N - k - 1`` observations for the
    second moment and for both means.

    ``direction="+"`` pairs column ``l`` at ``n`` with column ``m`` at
    ``n + k``; ``"-"`` pairs column ``l`` at ``n + k`` with column ``m`` at
    ``n``.
    """
    v = _values(panel)
    N = v.shape[0]
    if k < 0:
        raise ValueError("lag must be nonnegative")
    if N <= k + 1:
        raise InsufficientData(f"lag {k} needs more than {k + 1} rows, got {N}")
    n = N - k - 1
    if direction == "+":
        a, b = v[:n, l], v[k : k + n, m]
    elif direction == "-":
        a, b = v[k : k + n, l], v[:n, m]
    else:
        raise ValueError("direction must be '+' or '-'")
    return float(np.mean(a * b) - np.mean(a) * np.mean(b))


def overlapping_window_covariance(panel, M: int, l: int, m: int) -> float:
    """Sample covariance of the overlapping ``M``-window sums of columns ``l``
    and ``m``, over the first ``N - M - 1`` windows."""
    v = _values(panel)
    N = v.shape[0]
    if N <= M + 1:
        raise InsufficientData(f"need more than M+1={M + 1} rows, got {N}")
    n = N - M - 1
    w = window_sums(v[:, [l, m]], M)[:n]
    return float(np.mean(w[:, 0] * w[:, 1]) - np.mean(w[:, 0]) * np.mean(w[:, 1]))


def overlapping_pair_covariance(panel, M: int, m: int) -> float:
    """Overlapping-window covariance of the ``(M + 1)``-window sums of column
    0 with the ``M``-window sums of column ``m``, over ``N - M - 1`` windows."""
    v = _values(panel)
    N = v.shape[0]
    if N <= M + 1:
        raise InsufficientData(f"need more than M+1={M + 1} rows, got {N}")
    n = N - M - 1
    y = window_sums(v[:, 0], M + 1)[:n]
    w = window_sums(v[:, m], M)[:n]
    return float(np.mean(y * w) - np.mean(y) * np.mean(w))


def dispersion_covariance(panel, M: int, l: int, m: int) -> float:
    """Covariance of ``M``-window sums assembled from lag covariances.

    ``M a+(0) + sum_{j=1}^{M-1} j [a+(M-j) + a-(M-j)]``; column 0 may be
    passed uncentered since a constant shift cancels in every term.
    """
    v = _values(panel)
    if v.shape[0] <= M:
        raise InsufficientData(f"need more than M={M} rows, got {v.shape[0]}")
    total = M * lag_covariance(v, 0, l, m, "+")
    for j in range(1, M):
        total += j * (lag_covariance(v, M - j, l, m, "+") + lag_covariance(v, M - j, l, m, "-"))
    return float(total)


def dispersion_pair_covariance(panel, M: int, m: int) -> float:
    """Covariance of the ``(M + 1)``-window sum of column 0 with the
    ``M``-window sum of column ``m``, assembled from lag covariances.

    Over the ``(M + 1) x M`` grid of index pairs, lag ``d = 0..M-1`` with the
    covariate ahead occurs ``M - d`` times and lag ``e = 1..M`` with column 0
    ahead occurs ``M + 1 - e`` times.
    """
    v = _values(panel)
    total = 0.0
    for d in range(M):
        total += (M - d) * lag_covariance(v, d, 0, m, "+")
    for e in range(1, M + 1):
        total += (M + 1 - e) * lag_covariance(v, e, 0, m, "-")
    return float(total)


def _covariance(estimator):
    if estimator == "dispersion":
        return dispersion_covariance, dispersion_pair_covariance
    if estimator == "overlapping":
        return overlapping_window_covariance, overlapping_pair_covariance
    raise ValueError(f"estimator must be one of {ESTIMATORS}")


def estimate_drift(panel, M: int) -> float:
    """Drift per unit time: the mean of the ``M``-window sums of column 0 over
    ``N - M`` windows, divided by ``M``."""
    v = _values(panel)
    N = v.shape[0]
    w = window_sums(v[:, 0], M)[: N - M]
    return float(w.sum() / (M * (N - M)))


def build_second_moments(panel, M: int, estimator: str = "dispersion") -> SecondMoments:
    """Sample volatility matrix, covariance row and drift at horizon ``M``.

    Covariate cross terms are structural zeros and are set, not estimated.
    """
    v = _values(panel)
    N, K = v.shape
    if N <= M + 1:
        raise InsufficientData(f"need more than M+1={M + 1} rows, got {N}")
    cov, pair = _covariance(estimator)
    gamma = np.zeros((K, K))
    beta = np.empty(K)
    gamma[0, 0] = cov(v, M, 0, 0)
    beta[0] = pair(v, M, 0)
    for i in range(1, K):
        gamma[i, i] = cov(v, M, i, i)
        gamma[0, i] = gamma[i, 0] = cov(v, M, 0, i)
        beta[i] = pair(v, M, i)
    return SecondMoments(gamma, beta, estimate_drift(v, M), M, N)


def block_diagonal_inverse(gamma) -> np.ndarray:
    """Inverse of an arrow matrix through its Schur complement.

    With ``s = g11 - sum_i g1i**2 / gii`` and ``c_i = g1i / gii`` the inverse is
    ``[[1/s, -c/s], [-c^T/s, diag(1/g) + c^T c / s]]``: only reciprocals.
    """
    g = np.asarray(gamma, dtype=float)
    K = g.shape[0]
    d = np.diag(g)[1:]
    if np.any(d <= 0):
        raise SingularMatrix("covariate variances must be positive")
    c = g[0, 1:] / d
    schur = g[0, 0] - np.sum(g[0, 1:] * c)
    if not schur > 0:
        raise SingularMatrix(f"Schur complement is not positive: {schur!r}", schur=schur)
    inv = np.empty((K, K))
    inv[0, 0] = 1.0 / schur
    inv[0, 1:] = inv[1:, 0] = -c / schur
    inv[1:, 1:] = np.outer(c, c) / schur
    inv[np.arange(1, K), np.arange(1, K)] += 1.0 / d
    return inv


def estimate_xi(moments: SecondMoments, panel=None, margin: float = DEFAULT_MARGIN) -> ArFit:
    """Autoregression coefficients ``xi = B Gamma^-1`` and intercept.

    The intercept averages ``y_r - xi . [w_r1, w_r2, ...]`` over all windows
    when ``panel`` is given; otherwise it falls back to its population value
    ``rho (M + 1) - rho M xi_1``.  Constraint outcomes are recorded on the fit,
    not enforced.
    """
    inv = block_diagonal_inverse(moments.gamma)
    xi = inv @ moments.beta
    M = moments.horizon
    rho = moments.rho_hat
    if panel is not None:
        ws = WindowSums.build(panel, M)
        intercept = float(np.mean(ws.y - ws.w @ xi))
    else:
        intercept = rho * (M + 1) - rho * M * xi[0]
    flags = check_constraints(moments.gamma, xi, margin)
    return ArFit(xi, intercept, moments.weights, rho, M, flags)


def orthogonalize_step(panel, M: int, estimator: str = "dispersion") -> IncrementPanel:
    """Append ``p_1 - rho_hat - sum_i (g1i / gii) p_i`` as a new covariate column.

    Both covariance estimators are bilinear and ignore constant shifts, so the
    new column is exactly orthogonal (under the same estimator) to every
    existing covariate that was itself produced this way.
    """
    v = _values(panel)
    cov, _ = _covariance(estimator)
    rho = estimate_drift(v, M)
    new = v[:, 0] - rho
    for i in range(1, v.shape[1]):
        new = new - cov(v, M, 0, i) / cov(v, M, i, i) * v[:, i]
    return IncrementPanel(np.column_stack([v, new]))


def orthogonalize(series, M: int, estimator: str = "dispersion") -> np.ndarray:
    """Turn raw covariate series (columns) into centered orthogonal ones by
    repeated :func:`orthogonalize_step`."""
    raw = np.asarray(series, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    cols = np.empty((raw.shape[0], 0))
    for j in range(raw.shape[1]):
        extended = orthogonalize_step(np.column_stack([raw[:, j], cols]), M, estimator)
        cols = extended.values[:, 1:]
    return cols


@dataclass(frozen=True, eq=False)
class HistorySelection:
    m_max: int
    scores: dict  # M -> adjusted mean squared residual (inf when no fit exists)
    chosen_m: int


def _residual_score(panel, M: int, m_max: int, estimator: str) -> float:
    v = _values(panel)
    N = v.shape[0]
    moments = build_second_moments(v, M, estimator)
    fit = estimate_xi(moments, v)
    ws = WindowSums.build(v, M)
    # align targets: windows whose next increment falls at rows m_max .. N-1
    r = slice(m_max - M, N - M)
    res = ws.y[r] - fit.predict_window(ws.w[r])
    return float(np.sum(res**2) / (N - m_max - 2))


def select_relevant_history(panel, m_max: int, estimator: str = "dispersion") -> HistorySelection:
    """Choose ``M`` in ``1..m_max`` minimizing the adjusted mean squared residual.

    Every candidate is scored on the same ``N - m_max`` predicted increments
    (rows ``m_max .. N-1``) with divisor ``N - m_max - 2``.  Ties go to the
    smaller ``M``; candidates whose volatility matrix is singular score inf.
    """
    v = _values(panel)
    N = v.shape[0]
    if N <= m_max + 2:
        raise InsufficientData(f"need more than m_max+2={m_max + 2} rows, got {N}")
    scores = {}
    for M in range(1, m_max + 1):
        try:
            scores[M] = _residual_score(v, M, m_max, estimator)
        except SingularMatrix:
            scores[M] = float("inf")
    best = min(scores, key=lambda m: (scores[m], m))
    return HistorySelection(m_max, scores, best)


@dataclass(frozen=True, eq=False)
class FullFit:
    system: RaySystem
    fit: ArFit
    moments: SecondMoments
    selection: HistorySelection | None
    dropped: tuple = ()


def drop_degenerate(panel) -> tuple[np.ndarray, tuple]:
    v = _values(panel)
    keep = [0]
    dropped = []
    for i in range(1, v.shape[1]):
        if np.ptp(v[:, i]) == 0:
            dropped.append(i)
        else:
            keep.append(i)
    if dropped:
        warnings.warn(f"dropping zero-variance covariate columns {dropped}", stacklevel=3)
    return v[:, keep], tuple(dropped)


def fit_at(panel, M: int, estimator: str = "dispersion", margin: float = DEFAULT_MARGIN):
    """Moments, coefficients and ray parameters at a fixed horizon."""
    moments = build_second_moments(panel, M, estimator)
    fit = estimate_xi(moments, panel, margin)
    system = invert_moments(moments, fit, M, margin)
    return system, fit, moments


def fit_full(panel, m_max: int, horizon: int | None = None, estimator: str = "dispersion",
             margin: float = DEFAULT_MARGIN) -> FullFit:
    """Select the horizon, estimate moments and coefficients, invert to rays.

    ``horizon`` pins ``M`` (selection scores are still reported when
    ``m_max >= horizon``).  Raises :class:`ConstraintViolation` when the ray
    model is not apt for the data.
    """
    v, dropped = drop_degenerate(panel)
    if horizon is None:
        selection = select_relevant_history(v, m_max, estimator)
        M = selection.chosen_m
    else:
        M = int(horizon)
        selection = select_relevant_history(v, m_max, estimator) if v.shape[0] > m_max + 2 else None
    try:
        system, fit, moments = fit_at(v, M, estimator, margin)
    except ConstraintViolation as exc:
        logger.info("fit rejected at M=%d: %s", M, exc)
        raise
    return FullFit(system, fit, moments, selection, dropped)
