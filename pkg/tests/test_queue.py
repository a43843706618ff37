import numpy as np
import pytest

from brownray import InsufficientPaths, NonConvergence
from brownray.estimate import fit_at
from brownray.model import ArFit, RaySystem, conditional_increment_drift, conditional_moments, ray_covariance
from brownray.queue import (
    ConditionalLawEstimate,
    MCConfig,
    build_conditioning_state,
    expected_lost_output,
    expected_net_input,
    expected_queue_increment,
    mc_conditional_F,
    mc_conditional_H,
    queue_relevant_history,
    tobit_iterate,
)
from brownray.simulate import QueueTrace, sample_panel, simulate_queue_trace


def test_conditioning_state_plain_window():
    p = np.arange(1.0, 11.0)
    x = build_conditioning_state(p, None, 0.0, [1.0], 3, 2)
    assert x[0] == 2 + 3 + 4


def test_conditioning_state_recovers_hidden_component():
    s = RaySystem.from_arrays([2.0, 1.0], [8.0, 10.0], [1.0, 0.5], rho=0.3, horizon=3)
    panel = sample_panel(s, 4000, seed=1, extension="markov")
    v, h = panel.values, panel.hidden
    xs = np.array([build_conditioning_state(v[:, 0], v[:, 1:], 0.3, s.weights, 3, r) for r in range(1, 3998)])
    assert np.allclose(xs[:, 0], np.convolve(h[:, 0], np.ones(3), "valid")[:3997], atol=1e-10)
    assert np.var(xs[:, 0]) == pytest.approx(ray_covariance(s.components[0], 3, 3), rel=0.1)


@pytest.fixture
def small_system():
    return RaySystem.from_arrays([4.0], [4.0], rho=-0.1, horizon=2)


def test_H_support_and_atom(small_system):
    H = mc_conditional_H(small_system, [1.0], 0.3, 0.2, bandwidth=0.1, paths=20_000, seed=3)
    bound = 0.2 - 0.3
    assert H.support_bound == bound
    assert np.all(H.samples <= bound)
    assert H.atom_mass == pytest.approx(np.mean(H.samples == bound))
    assert 0 < H.atom_mass < 1
    assert expected_net_input(H) <= bound
    assert expected_lost_output(H, bound) == pytest.approx(np.mean(H.lost))
    assert expected_lost_output(H, bound) >= 0


def test_H_without_regulation_is_degenerate(small_system):
    H = mc_conditional_H(small_system, [0.0], 100.0, 100.4, paths=5000, seed=1)
    assert H.atom_mass == 1.0
    assert expected_net_input(H) == pytest.approx(0.4, abs=1e-12)
    assert expected_lost_output(H, 0.4) == pytest.approx(0.0, abs=1e-12)


def test_H_raw_increments_stay_near_band(small_system):
    H = mc_conditional_H(small_system, [1.0], 0.3, 0.2, bandwidth=0.1, paths=20_000, seed=3)
    assert np.all(H.raw_increments <= 0.2 - 0.3 + H.bandwidth + 1e-12)


def test_H_insufficient_paths(small_system):
    with pytest.raises(InsufficientPaths) as err:
        mc_conditional_H(small_system, [0.0], 0.5, 40.0, bandwidth=0.01, paths=1000, seed=0)
    assert err.value.count < 200
    H = mc_conditional_H(small_system, [0.0], 0.5, 2.0, bandwidth=0.001, paths=5000, seed=0, adaptive=True)
    assert H.count >= 200 and H.bandwidth > 0.001


def test_H_rejects_negative_lengths(small_system):
    with pytest.raises(ValueError):
        mc_conditional_H(small_system, [0.0], -1.0, 0.0)


def test_expected_net_input_simple_laws():
    two = ConditionalLawEstimate("H", np.array([0.0, -2.0]), 0.0)
    assert expected_net_input(two) == -1.0
    point = ConditionalLawEstimate("H", np.full(10, 0.7), 0.7)
    assert expected_net_input(point) == pytest.approx(0.7)


def test_F_is_proper(small_system):
    F = mc_conditional_F(small_system, [0.5], 0.2, paths=5000, seed=2)
    assert np.all(F.samples >= 0)
    grid = np.linspace(-1, 5, 200)
    c = F.cdf(grid)
    assert np.all(np.diff(c) >= 0)
    assert F.cdf(-1e-12) == 0 and F.cdf(1e9) == 1
    assert expected_queue_increment(F, 0.2) + 0.2 >= 0


def test_F_regulator_inactive_matches_model(small_system):
    x = [1.2]
    v = 200.0
    F = mc_conditional_F(small_system, x, v, paths=40_000, seed=4)
    coef, _ = conditional_moments(small_system)
    fit = ArFit(coef, 0.0, small_system.weights, small_system.rho, 2)
    expected = small_system.rho + conditional_increment_drift(fit, small_system.weights, x)
    assert expected_queue_increment(F, v) == pytest.approx(expected, abs=4 * F.standard_error())


def test_F_zero_start_with_negative_drift():
    s = RaySystem.from_arrays([1.0], [4.0], rho=-3.0, horizon=2)
    F = mc_conditional_F(s, [0.0], 0.0, paths=5000, seed=0)
    assert F.cdf(0.1) > 0.5


def test_F_standard_error_scaling(small_system):
    def spread(paths):
        means = [mc_conditional_F(small_system, [0.0], 0.5, paths, 8, seed).cdf(0.5) for seed in range(60)]
        return np.std(means)

    ratio = spread(500) / spread(2000)
    assert 1.4 < ratio < 2.8


def test_common_random_numbers(small_system):
    a = mc_conditional_F(small_system, [0.5], 1.0, 2000, 8, seed=11)
    b = mc_conditional_F(small_system, [0.5], 1.0, 2000, 8, seed=11)
    assert np.array_equal(a.samples, b.samples)
    other = RaySystem.from_arrays([4.4], [4.2], rho=-0.1, horizon=2)
    c = mc_conditional_F(other, [0.5], 1.0, 2000, 8, seed=11)
    assert np.corrcoef(a.samples, c.samples)[0, 1] > 0.95


def test_tobit_inactive_regime_is_fixed_point():
    s = RaySystem.from_arrays([4.0], [4.0], rho=0.05, horizon=2)
    sim = simulate_queue_trace(s, 1e4, 200, refinement=4, seed=0, extension="markov")
    assert np.all(sim.lost == 0)
    recon, system = tobit_iterate(sim.trace, 2, MCConfig(paths=1000, refinement=4))
    assert recon.converged and recon.iterations == 1
    assert np.array_equal(recon.p1, sim.trace.differences)
    assert np.all(recon.lost == 0)
    direct, _, _ = fit_at(sim.net_input[:, None], 2)
    assert np.allclose(system.phi, direct.phi, rtol=1e-9)
    assert np.allclose(system.delta, direct.delta, rtol=1e-9)


def test_tobit_bookkeeping_and_nonconvergence(queue_system):
    sim = simulate_queue_trace(queue_system, 1.0, 80, refinement=8, seed=2, extension="markov")
    cfg = MCConfig(paths=1000, refinement=8, max_iter=1, tol=1e-12)
    with pytest.warns(UserWarning):
        recon, _ = tobit_iterate(sim.trace, 2, cfg)
    assert not recon.converged
    dq = sim.trace.differences
    assert np.allclose(recon.p1[2:] + recon.lost, dq[2:], rtol=0, atol=1e-12)
    assert np.all(recon.lost >= 0)
    with pytest.raises(NonConvergence):
        tobit_iterate(sim.trace, 2, cfg, strict=True)


def test_tobit_is_deterministic(queue_system):
    sim = simulate_queue_trace(queue_system, 1.0, 60, refinement=8, seed=3, extension="markov")
    cfg = MCConfig(paths=800, refinement=8, seed=5)
    a, _ = tobit_iterate(sim.trace, 2, cfg)
    b, _ = tobit_iterate(sim.trace, 2, MCConfig(paths=800, refinement=8, seed=5, workers=3))
    assert np.array_equal(a.p1, b.p1)


def test_tobit_short_trace():
    with pytest.raises(ValueError):
        tobit_iterate(QueueTrace([1.0, 2.0, 1.5, 1.0]), 2)


def test_queue_history_trivial(queue_system):
    sim = simulate_queue_trace(queue_system, 5.0, 60, refinement=4, seed=1, extension="markov")
    hist = queue_relevant_history(sim.trace, 1, MCConfig(paths=500, refinement=4))
    assert hist.selection.chosen_m == 1
    assert all(s >= 0 for s in hist.selection.scores.values())
