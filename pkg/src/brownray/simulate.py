"""Synthetic data: increment panels, reflected queue traces.

Two ways of extending a ray's law beyond its working window are offered:

``"stationary"``
    One stationary Gaussian sequence whose increments have covariance
    ``theta*I - tau*J`` over the whole sample.  Such a sequence exists only
    when ``delta >= n``, so long samples force ``delta`` to be large.
``"markov"``
    The order-``M`` Markov extension: the first ``M`` increments are drawn
    from the ray law and each later increment from its conditional law given
    the sum of the previous ``M``.  Every window of ``M + 1`` consecutive
    increments then has exactly the ray law, and the relevant history is
    exactly ``M``.  Only ``delta > M + 1`` is required.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PSDViolation
from .model import RayComponent, RaySystem, ray_covariance

EXTENSIONS = ("stationary", "markov")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class IncrementPanel:
    """``N x K`` table of increments.

    Column 0 holds the observed increments with drift, columns ``1..K-1`` the
    centered, mutually orthogonal covariate increments.  ``hidden`` keeps the
    simulator's per-component increments for use as a test oracle.
    """

    values: np.ndarray
    hidden: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("a panel needs at least two rows")
        if not np.all(np.isfinite(v)):
            raise ValueError("panel values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def with_column(self, column) -> "IncrementPanel":
        return IncrementPanel(np.column_stack([self.values, column]), None)

    def replace_first(self, column) -> "IncrementPanel":
        v = self.values.copy()
        v[:, 0] = column
        return IncrementPanel(v, None)


@dataclass(frozen=True, eq=False)
class PathTrace:
    """Fine-grid sample path of a reflected queue.

    ``queue = q0 + net_input + lost`` holds exactly on every grid point.
    """

    grid_step: float
    net_input: np.ndarray
    queue: np.ndarray
    lost: np.ndarray
    q0: float

    def sampled(self, stride: int) -> "PathTrace":
        s = slice(None, None, stride)
        return PathTrace(self.grid_step * stride, self.net_input[s], self.queue[s], self.lost[s], self.q0)


@dataclass(frozen=True, eq=False)
class QueueTrace:
    """Queue lengths ``q_0..q_N`` at unit spacing plus optional covariates.

    ``covariates`` is ``N x (K-1)``: row ``n - 1`` holds the centered covariate
    increments over ``[n - 1, n]``.
    """

    q: np.ndarray
    covariates: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or len(q) < 2:
            raise ValueError("a queue trace needs at least two samples")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("queue lengths must be finite and nonnegative")
        object.__setattr__(self, "q", q)
        if self.covariates is not None:
            c = np.asarray(self.covariates, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != len(q) - 1:
                raise ValueError("covariates need one row per queue increment")
            if c.shape[1] == 0:
                c = None
            object.__setattr__(self, "covariates", c)

    @property
    def N(self) -> int:
        return len(self.q) - 1

    @property
    def K(self) -> int:
        return 1 if self.covariates is None else 1 + self.covariates.shape[1]

    @property
    def differences(self) -> np.ndarray:
        return np.diff(self.q)


@dataclass(frozen=True, eq=False)
class QueueSimulation:
    """Output of :func:`simulate_queue_trace`: the observable trace and the
    hidden quantities it was generated from."""

    trace: QueueTrace
    path: PathTrace
    net_input: np.ndarray  # unit-time net-input increments p_{n,1}
    lost: np.ndarray  # unit-time lost-output increments
    components: np.ndarray = field(default=None)  # unit-time component increments


def increment_covariance(component: RayComponent, lag: int, step: float = 1.0) -> float:
    """Covariance of two increments of length ``step`` separated by ``lag`` steps.

    ``step * (theta - tau * step)`` at lag 0 and ``-tau * step**2`` otherwise.
    """
    if lag < 0:
        raise ValueError("lag must be nonnegative")
    if lag == 0:
        return step * (component.theta - component.tau * step)
    return -component.tau * step**2


def _equicorrelated(a: float, b: float, n: int, size, rng) -> np.ndarray:
    """Draw N(0, a*I - b*J) exactly: independent normals plus a shared,
    negatively weighted common factor.  Requires ``a >= n*b``."""
    z = rng.standard_normal(tuple(size) + (n,))
    sa = np.sqrt(a)
    c = (np.sqrt(max(a - n * b, 0.0)) - sa) / n
    return sa * z + c * z.sum(axis=-1, keepdims=True)


def sample_component_increments(component: RayComponent, n: int, seed=None, step: float = 1.0,
                                size=()) -> np.ndarray:
    """One draw of ``n`` consecutive increments of a ray (stationary extension).

    Raises
    ------
    PSDViolation
        If ``delta <= n * step``: the increment covariance is then not a
        valid covariance over the requested span.
    """
    if n < 1:
        raise ValueError("n must be positive")
    span = n * step
    if component.delta <= span:
        raise PSDViolation(
            f"delta={component.delta} must exceed the simulated span {span}; "
            "use a larger delta, a shorter sample, or the 'markov' extension"
        )
    a = step * component.theta
    b = component.tau * step**2
    return _equicorrelated(a, b, n, size, _rng(seed))


def markov_coefficients(component: RayComponent, horizon: int):
    """``(slope, variance)`` of the next unit increment given the sum of the
    previous ``horizon`` increments."""
    M = horizon
    rmm = ray_covariance(component, M, M)
    rm1 = ray_covariance(component, M, M + 1)
    r11 = ray_covariance(component, M + 1, M + 1)
    xi = rm1 / rmm
    return xi - 1.0, r11 - rm1**2 / rmm


def sample_markov_increments(component: RayComponent, horizon: int, n: int, seed=None) -> np.ndarray:
    """``n`` unit increments of the order-``horizon`` Markov extension of a ray."""
    M = int(horizon)
    if component.delta <= M + 1:
        raise PSDViolation(f"delta={component.delta} must exceed horizon + 1 = {M + 1}")
    rng = _rng(seed)
    slope, var = markov_coefficients(component, M)
    sd = np.sqrt(var)
    out = np.empty(n)
    m0 = min(M, n)
    out[:m0] = _equicorrelated(component.theta, component.tau, M, (), rng)[:m0]
    eps = rng.standard_normal(max(n - M, 0)) * sd
    window = out[:m0].sum()
    for t in range(M, n):
        x = slope * window + eps[t - M]
        out[t] = x
        window += x - out[t - M]
    return out


def sample_panel(system: RaySystem, n: int, seed=None, extension: str = "stationary") -> IncrementPanel:
    """Observed series plus covariates for a ray system.

    Column 0 is ``rho + x_1 + sum_i k_i x_i``, column ``i`` is ``x_i``; the
    components are drawn independently from one seeded stream.
    """
    if extension not in EXTENSIONS:
        raise ValueError(f"extension must be one of {EXTENSIONS}")
    rng = _rng(seed)
    comps = np.empty((n, system.K))
    for i, c in enumerate(system.components):
        if extension == "stationary":
            comps[:, i] = sample_component_increments(c, n, rng)
        else:
            comps[:, i] = sample_markov_increments(c, system.horizon, n, rng)
    values = np.empty_like(comps)
    values[:, 0] = system.rho + comps @ system.weights
    values[:, 1:] = comps[:, 1:]
    return IncrementPanel(values, comps)


def regulate(q0: float, net_input) -> PathTrace:
    """One-sided regulator on a grid.

    ``lost[t] = max(0, max_{s<=t} -(q0 + net_input[s]))`` and
    ``queue = q0 + net_input + lost``.  The grid step is recorded as 1; use
    :func:`simulate_queue_trace` for refined grids.
    """
    z = np.asarray(net_input, dtype=float)
    if q0 < 0:
        raise ValueError("initial queue length must be nonnegative")
    if z.ndim != 1 or z.size == 0 or z[0] != 0:
        raise ValueError("net_input must be a cumulative path starting at 0")
    lost = np.maximum.accumulate(np.maximum(-(q0 + z), 0.0))
    # lost >= -(q0 + z) pointwise, so the sum cannot round below zero
    queue = (q0 + z) + lost
    return PathTrace(1.0, z, queue, lost, float(q0))


def regulate_batch(v, dz) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized regulator over rows of cumulative paths ``dz`` (``dz[:, 0] == 0``).

    Returns ``(queue, lost)`` arrays of the same shape.
    """
    dz = np.asarray(dz, dtype=float)
    lost = np.maximum.accumulate(np.maximum(-(v + dz), 0.0), axis=-1)
    return (v + dz) + lost, lost


def _bridge(n_paths, n_units, refinement, rate, rng) -> np.ndarray:
    """Brownian bridges with variance rate ``rate`` on each unit interval.

    Returns shape ``(n_units, refinement + 1)`` (or with a leading paths axis)
    with zeros at both ends of every unit interval.
    """
    h = 1.0 / refinement
    shape = tuple(n_paths) + (n_units, refinement)
    w = np.cumsum(rng.standard_normal(shape) * np.sqrt(rate * h), axis=-1)
    w = np.concatenate([np.zeros(shape[:-1] + (1,)), w], axis=-1)
    s = np.linspace(0.0, 1.0, refinement + 1)
    return w - s * w[..., -1:]


def simulate_queue_trace(system: RaySystem, q0: float, n: int, refinement: int = 16, seed=None,
                         extension: str = "stationary") -> QueueSimulation:
    """Reflected queue fed by ``Z(t) = rho*t + X(t)`` sampled on a fine grid.

    With ``extension="stationary"`` the fine-grid increments are drawn jointly
    with step covariance ``h*(theta - tau*h)`` and lag covariance
    ``-tau*h**2``.  With ``extension="markov"`` the unit-time increments come
    from the order-``M`` Markov extension and the path inside each unit
    interval is the exact conditional bridge (variance rate ``theta``) between
    the integer-time values.
    """
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    if extension not in EXTENSIONS:
        raise ValueError(f"extension must be one of {EXTENSIONS}")
    rng = _rng(seed)
    h = 1.0 / refinement
    n_fine = n * refinement
    x_fine = np.zeros(n_fine + 1)
    unit = np.empty((n, system.K))
    for i, c in enumerate(system.components):
        if extension == "stationary":
            inc = sample_component_increments(c, n_fine, rng, step=h)
            path = np.concatenate([[0.0], np.cumsum(inc)])
        else:
            inc_unit = sample_markov_increments(c, system.horizon, n, rng)
            knots = np.concatenate([[0.0], np.cumsum(inc_unit)])
            s = np.linspace(0.0, 1.0, refinement + 1)[:-1]
            interp = knots[:-1, None] + s * inc_unit[:, None]
            br = _bridge((), n, refinement, c.theta, rng)[:, :-1]
            path = np.concatenate([(interp + br).ravel(), [knots[-1]]])
        x_fine += c.weight * path
        unit[:, i] = np.diff(path[::refinement])
    t = np.arange(n_fine + 1) * h
    z = system.rho * t + x_fine
    fine = regulate(q0, z)
    fine = PathTrace(h, fine.net_input, fine.queue, fine.lost, fine.q0)
    coarse = fine.sampled(refinement)
    covs = unit[:, 1:] if system.K > 1 else None
    trace = QueueTrace(coarse.queue.copy(), covs)
    return QueueSimulation(trace, fine, np.diff(coarse.net_input), np.diff(coarse.lost), unit)
