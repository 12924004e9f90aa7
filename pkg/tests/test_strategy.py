import numpy as np
import pytest

from horizon_ez.generators import GeneratorInputs, bellman_infimand, generator_H
from horizon_ez.mcverify import simulate_state
from horizon_ez.model import CoefficientSet, Preferences
from horizon_ez.strategy import (OutsideDomainError, fixed_horizon_portfolio,
                                 optimal_consumption_ratio, optimal_portfolio, simulate_wealth,
                                 strategy_field)


def test_fixed_horizon_weight(coeffs, prefs):
    assert fixed_horizon_portfolio(coeffs, prefs) == 0.235
    assert fixed_horizon_portfolio(coeffs, Preferences(4.0, 1.5, 0.08)) == pytest.approx(0.1175)


def test_fixed_horizon_requires_heston(coeffs, prefs):
    generic = CoefficientSet(**{k: getattr(coeffs, k) for k in
                                ("r", "lam", "sigma", "rho", "rhohat", "a", "b",
                                 "alpha_w", "beta_w", "gamma_w")})
    with pytest.raises(ValueError):
        fixed_horizon_portfolio(generic, prefs)


def test_zero_gradient_gives_baseline(solution, coeffs, prefs):
    # u vanishes along the variance walls, hence so does u_w
    w = solution.grid.w[3:-3:7]
    y = np.full_like(w, solution.grid.domain.y2)
    pi = optimal_portfolio(w, y, solution, coeffs, prefs)
    assert np.allclose(pi, fixed_horizon_portfolio(coeffs, prefs), atol=1e-9)


def test_heston_shortcut_agrees(solution, coeffs, prefs):
    rng = np.random.default_rng(5)
    w = rng.uniform(-0.01, 0.01, 200)
    y = rng.uniform(0.001, 1.0, 200)
    a = optimal_portfolio(w, y, solution, coeffs, prefs)
    b = optimal_portfolio(w, y, solution, coeffs, prefs, heston_form=True)
    assert np.max(np.abs(a - b)) < 1e-12


def test_consumption_ratio(solution, prefs):
    assert optimal_consumption_ratio(0.01, 0.5, solution, prefs) == pytest.approx(
        0.08 ** 1.5, rel=1e-12)
    u = solution.at(0.0, 0.04)
    c = optimal_consumption_ratio(0.0, 0.04, solution, prefs)
    assert c == pytest.approx(0.08 ** 1.5 * np.exp(0.5 * u))
    # larger u, larger consumption ratio
    assert c > 0.08 ** 1.5


def test_outside_domain_rejected(solution, coeffs, prefs):
    with pytest.raises(OutsideDomainError):
        optimal_portfolio(0.02, 0.1, solution, coeffs, prefs)
    with pytest.raises(OutsideDomainError):
        optimal_consumption_ratio(0.0, 2.0, solution, prefs)


def test_field_invariants(solution, coeffs, prefs):
    f = strategy_field(solution, coeffs, prefs)
    assert np.all(f.c_tilde_star > 0) and np.all(np.isfinite(f.pi_star))
    assert np.ptp(f.pi_star) > 0.1


def test_bellman_consistency_on_grid(solution, coeffs, prefs):
    f = strategy_field(solution, coeffs, prefs)
    W, Y = solution.grid.mesh()
    inp = GeneratorInputs(solution.u, solution.z_field, solution.zhat_field, Y)
    h = generator_H(inp, coeffs, prefs)
    val = bellman_infimand(f.pi_star, f.c_tilde_star, inp, coeffs, prefs)
    assert np.max(np.abs(val - h)) < 1e-10
    rng = np.random.default_rng(9)
    pert = bellman_infimand(f.pi_star + rng.normal(0, 0.1, W.shape),
                            f.c_tilde_star * np.exp(rng.normal(0, 0.3, W.shape)),
                            inp, coeffs, prefs)
    assert np.all(pert > h)


def test_riskless_compounding(market, domain, coeffs):
    path = simulate_state(0.0, 0.04, market, domain, 1e-5, seed=3)
    x = simulate_wealth(path, lambda w, y: (0.0, 0.0), 2.0, coeffs)
    assert x[-1] == pytest.approx(2.0 * np.exp(0.05 * path.exit_time), rel=1e-12)


def test_wealth_positive_under_optimal_field(market, domain, coeffs, prefs, solution):
    for seed in range(5):
        path = simulate_state(0.0, 0.04, market, domain, 1e-5, seed=seed)
        x = simulate_wealth(path, solution, 1.0, coeffs, prefs)
        assert len(x) == path.exit_index + 1
        assert np.all(x > 0)
        levered = simulate_wealth(path, lambda w, y: (40.0, 0.5), 1.0, coeffs)
        assert np.all(levered > 0)
