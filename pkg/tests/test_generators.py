import numpy as np
import pytest
from hypothesis import given, strategies as st

from horizon_ez import generators as gen
from horizon_ez.generators import (GeneratorInputs, aggregator_f, bellman_infimand,
                                   generator_H, optimal_controls, pde_generator_G,
                                   pde_generator_phi, phi_derivative, phi_truncation,
                                   transformed_F, truncated_Hn, truncation_J, upper_bound_H)
from horizon_ez.model import heston_coefficients, market_constants, paper_heston

finite = dict(allow_nan=False, allow_infinity=False)
ys = st.floats(0.001, 1.0, **finite)
ds = st.floats(-20.0, 20.0, **finite)
zs = st.floats(-3.0, 3.0, **finite)


def test_aggregator_vanishes_at_stationary_point(prefs):
    for c in (0.3, 1.0, 2.5):
        v = c ** (1 - prefs.gamma) / (1 - prefs.gamma)
        assert abs(aggregator_f(c, v, prefs)) < 1e-12


def test_aggregator_zero_consumption(prefs):
    assert aggregator_f(0.0, -2.0, prefs) == pytest.approx(-prefs.delta * prefs.theta * -2.0)


def test_aggregator_two_term_oracle(prefs):
    # (1 - gamma) v = 1, so the power factor is 1
    first = 0.08 * 2 ** (1 / 3) / (1 / 3)
    second = -0.08 * -3.0 * -1.0
    assert aggregator_f(2.0, -1.0, prefs) == pytest.approx(first + second, rel=1e-14)


def test_aggregator_rejects_positive_v(prefs):
    with pytest.raises(ValueError):
        aggregator_f(1.0, 0.1, prefs)


def test_transformed_generator(prefs):
    assert transformed_F(0.3, 1.2, 0.0, prefs) == 0.0
    assert transformed_F(0.0, 1.0, 1.0, prefs) == pytest.approx(-0.24, abs=1e-15)


@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.0, 3.0), st.floats(0.1, 4.0))
def test_transformed_generator_decreasing(prefs, y1, dy, t, c):
    assert transformed_F(t, c, y1 + dy + 1e-3, prefs) < transformed_F(t, c, y1, prefs)


def test_generator_at_origin(coeffs, prefs):
    y = 0.3
    lam2_over_sig2 = 0.47 ** 2 * y
    expected = 0.08 ** 1.5 * -3.0 / 1.5 + -1.0 * (0.05 + lam2_over_sig2 / 4.0) + 0.24
    assert generator_H(GeneratorInputs(0.0, 0.0, 0.0, y), coeffs, prefs) == pytest.approx(
        expected, rel=1e-14)


def test_pde_generator_closed_form_at_long_run_variance(prefs):
    coeffs = heston_coefficients(paper_heston(0.0))
    y = 0.0225
    expected = 0.24 - 0.08 ** 1.5 * 2.0 - (0.05 + 0.47 ** 2 * 0.0225 / 4.0)
    assert pde_generator_G(y, 0.0, 0.0, 0.0, coeffs, prefs) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.1435026, abs=1e-6)


@given(ys, ds, zs, zs)
def test_infimand_attains_generator(coeffs, prefs, y, d, z, zhat):
    inp = GeneratorInputs(d, z, zhat, y)
    pi, c = optimal_controls(inp, coeffs, prefs)
    h = generator_H(inp, coeffs, prefs)
    assert bellman_infimand(pi, c, inp, coeffs, prefs) == pytest.approx(h, rel=1e-10, abs=1e-10)


@given(ys, ds, zs, zs, st.floats(-5, 5), st.floats(0, 5))
def test_infimand_dominates_generator(coeffs, prefs, y, d, z, zhat, pi, c):
    inp = GeneratorInputs(d, z, zhat, y)
    h = generator_H(inp, coeffs, prefs)
    assert bellman_infimand(pi, c, inp, coeffs, prefs) >= h - 1e-10 * max(1.0, abs(h))


def test_consumption_subproblem_convex(coeffs, prefs):
    inp = GeneratorInputs(0.4, 0.1, -0.2, 0.05)
    _, c = optimal_controls(inp, coeffs, prefs)
    h = 1e-4 * c

    def f(x):
        return bellman_infimand(0.2, x, inp, coeffs, prefs)
    assert (f(c + h) - 2 * f(c) + f(c - h)) / h ** 2 > 0


def test_cross_term_vanishes_with_zero_rho(coeffs, prefs):
    # with rho = 0 the generator is even in z
    a = generator_H(GeneratorInputs(0.1, 0.3, 0.2, 0.1), coeffs, prefs)
    b = generator_H(GeneratorInputs(0.1, -0.3, 0.2, 0.1), coeffs, prefs)
    assert a == pytest.approx(b, rel=1e-15)


@given(ys, st.floats(-1, 1), zs, zs)
def test_pde_generator_equals_H(coeffs, prefs, y, d, z, zhat):
    assert pde_generator_G(y, d, z, zhat, coeffs, prefs) == generator_H(
        GeneratorInputs(d, z, zhat, y), coeffs, prefs)


@given(ys, ds, zs, zs)
def test_generator_quadratic_in_gradient_scale(coeffs, prefs, y, d, z, zhat):
    base = pde_generator_G(y, d, 0.0, 0.0, coeffs, prefs)
    vals = [pde_generator_G(y, d, t * z, t * zhat, coeffs, prefs) - base for t in (1, 2, 3)]
    # a degree-2 polynomial through 0 has vanishing third difference
    third = vals[2] - 3 * vals[1] + 3 * vals[0]
    assert abs(third) < 1e-10 * (1 + max(abs(v) for v in vals))


@given(st.floats(0.1, 10), st.floats(-1, 1))
def test_truncation_matches_inside_band(coeffs, prefs, n, frac):
    d = frac * n
    inp = GeneratorInputs(d, 0.2, -0.4, 0.2)
    assert truncated_Hn(n, inp, coeffs, prefs) == generator_H(inp, coeffs, prefs)


def test_truncation_continuous_at_level(prefs):
    for n in (0.5, 2.0, 7.0):
        left = truncation_J(np.nextafter(n, -np.inf), n, prefs)
        right = truncation_J(np.nextafter(n, np.inf), n, prefs)
        assert abs(left - right) < 1e-12


@given(st.floats(0.1, 5.0))
def test_truncation_strictly_increasing(prefs, n):
    d = np.linspace(-10 * n, 10 * n, 2001)
    assert np.all(np.diff(truncation_J(d, n, prefs)) > 0)


def test_truncation_converges_as_level_grows(coeffs, prefs):
    inp = GeneratorInputs(np.linspace(-3, 3, 13), 0.1, 0.1, 0.3)
    assert np.array_equal(truncated_Hn(3.0, inp, coeffs, prefs), generator_H(inp, coeffs, prefs))
    assert not np.array_equal(truncated_Hn(1.0, inp, coeffs, prefs),
                              generator_H(inp, coeffs, prefs))


def test_upper_bound_dominates(coeffs, domain, prefs):
    rng = np.random.default_rng(3)
    const = market_constants(coeffs, domain, prefs)
    n = rng.uniform(0.1, 10, 10_000)
    d = rng.uniform(-20, 20, 10_000)
    z, zhat = rng.normal(0, 2, (2, 10_000))
    y = rng.uniform(domain.y1, domain.y2, 10_000)
    hn = np.array([truncated_Hn(ni, GeneratorInputs(di, zi, zhi, yi), coeffs, prefs)
                   for ni, di, zi, zhi, yi in zip(n, d, z, zhat, y)])
    assert np.all(upper_bound_H(d, z, zhat, const, prefs) >= hn)


def test_upper_bound_shape(coeffs, domain, prefs):
    const = market_constants(coeffs, domain, prefs)
    assert upper_bound_H(0.0, 0.0, 0.0, const, prefs) == const.c1
    slope = upper_bound_H(1.0, 0.3, 0.1, const, prefs) - upper_bound_H(0.0, 0.3, 0.1, const, prefs)
    assert slope == pytest.approx(-prefs.delta_psi, rel=1e-12)


def test_phi_continuity_and_origin(prefs):
    for cb in (0.5, 5.0, 12.0):
        for edge in (cb, -cb):
            lo = phi_truncation(np.nextafter(edge, -np.inf), cb, prefs)
            hi = phi_truncation(np.nextafter(edge, np.inf), cb, prefs)
            assert abs(lo - hi) < 1e-12
    assert phi_truncation(0.0, 5.0, prefs) == 1.0


@given(st.floats(0.5, 10), st.floats(-50, 50), st.floats(-50, 50))
def test_phi_lipschitz(prefs, cb, a, b):
    K = max(1.0, prefs.exp_rate * np.exp(prefs.exp_rate * cb))
    assert abs(phi_truncation(a, cb, prefs) - phi_truncation(b, cb, prefs)) <= K * abs(a - b) + 1e-12


def test_phi_derivatives_match_finite_differences(coeffs, prefs):
    y, d, z, zh = 0.2, 0.7, 0.3, -0.5
    h = 1e-6
    G, Gd, Gz, Gzh = pde_generator_phi(y, d, z, zh, coeffs, prefs, 5.0, with_derivatives=True)
    fd = lambda **kw: pde_generator_phi(y, kw.get("d", d), kw.get("z", z), kw.get("zh", zh),
                                        coeffs, prefs, 5.0)
    assert Gd == pytest.approx((fd(d=d + h) - fd(d=d - h)) / (2 * h), rel=1e-7)
    assert Gz == pytest.approx((fd(z=z + h) - fd(z=z - h)) / (2 * h), rel=1e-7)
    assert Gzh == pytest.approx((fd(zh=zh + h) - fd(zh=zh - h)) / (2 * h), rel=1e-7)
    assert phi_derivative(7.0, 5.0, prefs) == 1.0


def test_exp_clamp_is_counted(prefs):
    gen.reset_clamp_events()
    assert np.isfinite(gen.safe_exp(np.array([1e4, -1e4, 0.0]))).all()
    assert gen.clamp_events() == 2
    gen.reset_clamp_events()


def test_helper_scalars_bounded(coeffs, prefs):
    loc = gen.local_coefficients(np.linspace(0.001, 1, 5), coeffs, prefs)
    for arr in (loc.M, loc.Mhat):
        assert np.all(arr >= 1 / prefs.gamma - 1e-15) and np.all(arr <= 1 + 1e-15)
