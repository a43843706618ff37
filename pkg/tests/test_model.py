import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brownray import ConstraintViolation
from brownray.model import (
    ArFit,
    RayComponent,
    RaySystem,
    SecondMoments,
    check_constraints,
    conditional_increment_drift,
    conditional_moments,
    eta_to_xi,
    invert_moments,
    random_admissible,
    ray_covariance,
    superposed_covariance,
    theoretical_moments,
    volatility_blocks,
    xi_to_eta,
)


def test_ray_covariance_closed_form():
    c = RayComponent(2.0, 10.0)
    assert ray_covariance(c, 3, 5) == pytest.approx(2.0 * 0.3 * 0.5)
    assert ray_covariance(c, 5, 3) == ray_covariance(c, 3, 5)
    assert ray_covariance(c, 0, 7) == 0.0
    assert ray_covariance(c, 10, 10) == 0.0
    # s (theta - tau t)
    assert ray_covariance(c, 3, 5) == pytest.approx(3 * (c.theta - c.tau * 5))


def test_ray_covariance_domain():
    c = RayComponent(1.0, 4.0)
    with pytest.raises(ValueError):
        ray_covariance(c, 1.0, 4.5)
    with pytest.raises(ValueError):
        ray_covariance(c, -1.0, 2.0)


@settings(max_examples=50, deadline=None)
@given(
    phi=st.floats(0.01, 100), delta=st.floats(1.0, 1e4),
    ts=st.lists(st.floats(0, 1), min_size=2, max_size=12),
)
def test_covariance_gram_is_psd(phi, delta, ts):
    c = RayComponent(phi, delta)
    t = np.array(sorted(ts)) * delta
    G = np.array([[ray_covariance(c, a, b) for b in t] for a in t])
    ev = np.linalg.eigvalsh(G)
    assert ev.min() >= -1e-9 * max(np.trace(G), 1e-300)


def test_superposition_parameters():
    s = RaySystem.from_arrays([2.0, 1.0], [10.0, 20.0], [1.0, 0.5], horizon=2)
    assert s.Theta == pytest.approx(2.0 / 10 + 0.25 * 1.0 / 20)
    assert s.T == pytest.approx(2.0 / 100 + 0.25 * 1.0 / 400)
    assert superposed_covariance(s, 2, 3) == pytest.approx(2 * (s.Theta - s.T * 3))


def test_system_validation():
    with pytest.raises(ValueError):
        RaySystem.from_arrays([1.0], [2.5], horizon=2)  # delta must exceed M + 1
    with pytest.raises(ValueError):
        RaySystem.from_arrays([1.0, 1.0], [10, 10], [0.5, 1.0])
    with pytest.raises(ValueError):
        RayComponent(-1.0, 5.0)


def test_volatility_blocks_arrow_pattern():
    s = RaySystem.from_arrays([2, 1, 3], [10, 20, 30], [1, 0.5, -2], horizon=3)
    A, B, G = volatility_blocks(s)
    assert G[1, 2] == 0 and G[2, 1] == 0
    assert np.allclose(G, G.T)
    assert A > 0 and np.all(np.linalg.eigvalsh(G) > 0)


@settings(max_examples=40, deadline=None)
@given(xi=st.lists(st.floats(-5, 5), min_size=1, max_size=5), seed=st.integers(0, 2**32 - 1))
def test_eta_xi_inverse(xi, seed):
    rng = np.random.default_rng(seed)
    k = np.concatenate([[1.0], rng.uniform(0.1, 3, len(xi) - 1) * rng.choice([-1, 1], len(xi) - 1)])
    back = eta_to_xi(xi_to_eta(xi, k), k)
    assert np.allclose(back, xi, rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 3), M=st.integers(1, 8))
def test_inversion_round_trip(seed, K, M):
    moments, fit = random_admissible(np.random.default_rng(seed), K, M)
    system = invert_moments(moments, fit)
    assert np.all(system.delta > M + 1) and np.all(system.phi > 0)
    rebuilt = theoretical_moments(system)
    assert np.allclose(rebuilt.gamma, moments.gamma, rtol=1e-10, atol=1e-12 * np.abs(moments.gamma).max())
    coef, _ = conditional_moments(system)
    assert np.allclose(coef, fit.xi, rtol=1e-10, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 4), M=st.integers(1, 5))
def test_constraint_equivalence_with_eta(seed, K, M):
    # draws inside and outside the admissible region
    rng = np.random.default_rng(seed)
    moments, _ = random_admissible(rng, K, M)
    g = moments.gamma
    xi = rng.uniform(-0.5, 1.5, K) * np.concatenate([[1.0], g[0, 1:] / np.diag(g)[1:]])
    flags = check_constraints(g, xi, margin=0.0)
    persistence_ok = all(v for k, v in flags.items() if "persistence" in k or k.startswith("xi1"))
    eta = xi_to_eta(xi, moments.weights)
    assert persistence_ok == bool(np.all((eta > -1) & (eta < 0)))


def test_delta_monotone_in_mixed_persistence():
    # the covariate time scale grows with z_i on (0, 1)
    g = np.array([[2.0, 0.5], [0.5, 1.0]])
    x1 = 0.4
    deltas = []
    for z in np.linspace(0.05, 0.95, 19):
        xi = np.array([x1, (z - x1) * g[0, 1] / g[1, 1]])
        m = SecondMoments(g, xi @ g, 0.0, 2)
        deltas.append(invert_moments(m, ArFit(xi, 0.0, m.weights, 0.0, 2)).delta[1])
    assert np.all(np.diff(deltas) > 0)


def test_eta_from_theory_is_minus_inverse_gap():
    s = RaySystem.from_arrays([2, 1], [10, 25], [1, 0.7], horizon=3)
    coef, var = conditional_moments(s)
    eta = xi_to_eta(coef, s.weights)
    assert np.allclose(eta, -1.0 / (s.delta - 3), rtol=1e-12)
    assert var > 0


def test_conditional_increment_drift():
    s = RaySystem.from_arrays([2, 1], [10, 25], [1, 0.7], horizon=3)
    coef, _ = conditional_moments(s)
    fit = ArFit(coef, 0.0, s.weights, 0.0, 3)
    x = np.array([1.5, -2.0])
    # E[X(M+1) - X(M) | state] from the regression on the window state
    state = np.array([x[0] + 0.7 * x[1], x[1]])
    direct = float(state @ coef) - state[0]
    assert conditional_increment_drift(fit, s.weights, x) == pytest.approx(direct, rel=1e-12)


def test_psi_and_xi_predictions_agree(rng):
    fit = ArFit([0.6, -0.2, 0.1], 0.3, [1.0, 0.5, 2.0], rho=0.1, horizon=4)
    w = rng.normal(size=(50, 3))
    via_xi = fit.predict_window(w) - w[:, 0]
    assert np.allclose(fit.predict_increment(w), via_xi, rtol=1e-12, atol=1e-12)
    assert fit.psi[-1] == 0.3


def test_drift_residual_zero_at_population_intercept():
    M, rho, x1 = 3, 0.2, 0.55
    intercept = rho * (M + 1) - rho * M * x1
    fit = ArFit([x1], intercept, [1.0], rho, M)
    assert abs(fit.drift_residual) < 1e-15


@pytest.mark.parametrize("xi1", [0.0, 1.0, 1.2, -0.1])
def test_inversion_rejects_boundary(xi1):
    m = SecondMoments(np.array([[1.0]]), np.array([xi1]), 0.0, 2)
    with pytest.raises(ConstraintViolation) as err:
        invert_moments(m, ArFit([xi1], 0.0, [1.0], 0.0, 2))
    assert "xi1_in_unit_interval" in err.value.failed


def test_inversion_rejects_strong_correlation():
    g = np.array([[1.0, 0.99], [0.99, 1.0]])
    xi = np.array([0.5, 0.0])
    m = SecondMoments(g, xi @ g, 0.0, 1)
    # squared correlation 0.9801 is inside the unit bound but not inside the margin
    invert_moments(m, ArFit(xi, 0.0, m.weights, 0.0, 1), margin=0.0)
    with pytest.raises(ConstraintViolation) as err:
        invert_moments(m, ArFit(xi, 0.0, m.weights, 0.0, 1), margin=0.05)
    assert err.value.failed == ("correlation_sum_below_one",)


def test_second_moments_reject_dense_gamma():
    g = np.ones((3, 3)) + np.eye(3)
    with pytest.raises(ValueError):
        SecondMoments(g, np.ones(3), 0.0, 1)
