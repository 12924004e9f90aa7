import math

import numpy as np
import pytest

from horizon_ez.model import (CoefficientSet, HestonParams, ParameterError, Preferences,
                              RectDomain, heston_coefficients, market_constants,
                              new_preferences, paper_heston, validate_feller)


def test_reference_exponents(prefs):
    assert prefs.theta == pytest.approx(-3.0, abs=1e-14)
    assert prefs.p_plus == pytest.approx(2.0 / 3.0, abs=1e-14)
    assert prefs.p_minus == pytest.approx(-14.0 / 3.0, abs=1e-13)
    assert prefs.exp_rate == pytest.approx(0.5, abs=1e-14)
    assert prefs.delta_psi == pytest.approx(0.08 ** 1.5, rel=1e-14)


@pytest.mark.parametrize("args", [(1.0, 1.5, 0.08), (2.0, 0.9, 0.08), (2.0, 1.5, 0.0)])
def test_preferences_reject_out_of_range(args):
    with pytest.raises(ParameterError):
        new_preferences(*args)


def test_feller_flag_for_reference_market(market):
    # 2 * 5 * 0.0225 = 0.225 < 0.25
    assert validate_feller(market) is False
    assert validate_feller(HestonParams.from_k2(5.0, 0.2, 0.0225, 0.05, 0.47)) is True


def test_heston_coefficients_values(coeffs):
    y = np.array([0.01, 0.04, 0.5])
    assert np.allclose(coeffs.sigma(y), np.sqrt(y))
    assert np.allclose(coeffs.lam(y), 0.47 * y)
    assert np.allclose(coeffs.a(y), -5.0 * (y - 0.0225))
    assert np.allclose(coeffs.b(y), 0.5 * np.sqrt(y))
    assert np.allclose(coeffs.beta_w(0.0, y), 0.0)
    assert np.allclose(coeffs.gamma_w(0.0, y), np.sqrt(y))
    assert np.allclose(coeffs.rho(y) ** 2 + coeffs.rhohat(y) ** 2, 1.0)


def test_domain_validation():
    with pytest.raises(ParameterError):
        RectDomain(0.02, 0.5, 0.5)
    with pytest.raises(ParameterError):
        RectDomain(0.0, 0.001, 1.0)
    d = RectDomain(0.02, 0.001, 1.0)
    assert d.contains(0.01, 0.001) and not d.interior(0.01, 0.5)


def test_market_constants_reference(coeffs, domain, prefs):
    c = market_constants(coeffs, domain, prefs)
    assert c.c_lam_sig == pytest.approx(0.47 ** 2 * 1.0)
    assert c.r_bar == c.r_under == 0.05
    # (1 - gamma)(r - delta / (1 - 1/psi)) = -(0.05 - 0.24)
    assert c.c1 == pytest.approx(0.19, abs=1e-14)


def test_market_constants_scan_matches_closed_form(market, domain, prefs):
    h = heston_coefficients(paper_heston(0.05))
    generic = CoefficientSet(**{k: getattr(h, k) for k in
                                ("r", "lam", "sigma", "rho", "rhohat", "a", "b",
                                 "alpha_w", "beta_w", "gamma_w")})
    a = market_constants(h, domain, prefs)
    b = market_constants(generic, domain, prefs)
    assert b.c_lam_sig == pytest.approx(a.c_lam_sig, rel=1e-12)
    assert a.c_lam_sig == pytest.approx(0.47 ** 2 * 1.05)


def test_c1_adds_ratio_term_above_two():
    p = Preferences(4.0, 1.5, 0.08)
    h = heston_coefficients(paper_heston())
    c = market_constants(h, RectDomain(0.02, 0.001, 1.0), p)
    expected = -3.0 * (0.05 - 0.24) + (-3.0) * (-2.0) / 32.0 * 0.47 ** 2
    assert c.c1 == pytest.approx(expected, rel=1e-13)
    assert math.isfinite(c.c1)
