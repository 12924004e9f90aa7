"""Scalar generators of the value-decomposition BSDE and their relatives.

All functions broadcast over numpy arrays.  Notation: ``d`` is the
decomposition value (D or u), ``z`` and ``zhat`` the loadings on the
variance noise and on the orthogonal noise.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import CoefficientSet, MarketConstants, Preferences

logger = logging.getLogger(__name__)

EXP_CLAMP = 700.0


class _ClampCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int):
        with self._lock:
            self.count += n

    def reset(self):
        with self._lock:
            self.count = 0


_clamps = _ClampCounter()


def clamp_events() -> int:
    """Number of exponent arguments clamped to +-700 since the last reset."""
    return _clamps.count


def reset_clamp_events() -> None:
    _clamps.reset()


def safe_exp(x):
    x = np.asarray(x, dtype=float)
    clipped = np.clip(x, -EXP_CLAMP, EXP_CLAMP)
    n = int(np.count_nonzero(clipped != x))
    if n:
        _clamps.add(n)
        logger.debug("clamped %d exponent arguments", n)
    return np.exp(clipped)


@dataclass(frozen=True)
class GeneratorInputs:
    d: np.ndarray
    z: np.ndarray
    zhat: np.ndarray
    y: np.ndarray


class LocalCoefficients(NamedTuple):
    r: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    rhohat: np.ndarray
    M: np.ndarray
    Mhat: np.ndarray
    h: np.ndarray


def local_coefficients(y, coeffs: CoefficientSet, prefs: Preferences) -> LocalCoefficients:
    """Market coefficients at y together with the helper scalars M, Mhat, h."""
    y = np.asarray(y, dtype=float)
    g = prefs.gamma
    r, lam, sigma = coeffs.r(y), coeffs.lam(y), coeffs.sigma(y)
    rho, rhohat = coeffs.rho(y), coeffs.rhohat(y)
    kappa = (1.0 - g) / g
    M = 1.0 + kappa * rho ** 2
    Mhat = 1.0 + kappa * rhohat ** 2
    h = (1.0 - g) * (r + lam ** 2 / (2.0 * g * sigma ** 2))
    return LocalCoefficients(r, lam, sigma, rho, rhohat, M, Mhat, h)


def aggregator_f(c, v, prefs: Preferences):
    """Epstein-Zin aggregator f(c, v), defined for c >= 0 and v <= 0."""
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v > 0):
        raise ValueError("aggregator_f is defined only for v <= 0")
    if np.any(c < 0):
        raise ValueError("aggregator_f is defined only for c >= 0")
    one_m = 1.0 - 1.0 / prefs.psi
    th = prefs.theta
    scaled = (1.0 - prefs.gamma) * v
    return prefs.delta * c ** one_m / one_m * scaled ** (1.0 - 1.0 / th) - prefs.delta * th * v


def transformed_F(t, c, y, prefs: Preferences):
    """Generator of the transformed utility BSDE; decreasing in y >= 0."""
    y = np.asarray(y, dtype=float)
    th = prefs.theta
    return (prefs.delta * th * np.exp(-prefs.delta * np.asarray(t, dtype=float))
            * np.asarray(c, dtype=float) ** (1.0 - 1.0 / prefs.psi)
            * y * np.abs(y) ** (-1.0 / th))


def _quadratic_part(z, zhat, loc: LocalCoefficients, prefs: Preferences):
    """Every term of H except the one carrying exp(-(psi/theta) d)."""
    g = prefs.gamma
    kappa = (1.0 - g) / g
    ratio = loc.lam / loc.sigma
    return (loc.M * z ** 2 / 2.0 + loc.Mhat * zhat ** 2 / 2.0
            + kappa * ratio * (loc.rho * z + loc.rhohat * zhat)
            + kappa * loc.rho * loc.rhohat * z * zhat
            + loc.h - prefs.delta * prefs.theta)


def _exp_coefficient(prefs: Preferences) -> float:
    return prefs.delta_psi * prefs.theta / prefs.psi


def generator_H(inputs: GeneratorInputs, coeffs: CoefficientSet, prefs: Preferences):
    loc = local_coefficients(inputs.y, coeffs, prefs)
    d = np.asarray(inputs.d, dtype=float)
    return (_quadratic_part(np.asarray(inputs.z, float), np.asarray(inputs.zhat, float), loc, prefs)
            + _exp_coefficient(prefs) * safe_exp(prefs.exp_rate * d))


def optimal_controls(inputs: GeneratorInputs, coeffs: CoefficientSet, prefs: Preferences):
    """First-order points (pi*, c_tilde*) of the Bellman infimand."""
    loc = local_coefficients(inputs.y, coeffs, prefs)
    pi = ((loc.lam + loc.sigma * (loc.rho * inputs.z + loc.rhohat * inputs.zhat))
          / (prefs.gamma * loc.sigma ** 2))
    c_tilde = prefs.delta_psi * safe_exp(prefs.exp_rate * np.asarray(inputs.d, dtype=float))
    return pi, c_tilde


def bellman_infimand(pi, c_tilde, inputs: GeneratorInputs, coeffs: CoefficientSet,
                     prefs: Preferences):
    """Drift bracket before optimization over the portfolio and consumption ratio."""
    loc = local_coefficients(inputs.y, coeffs, prefs)
    g, th = prefs.gamma, prefs.theta
    z = np.asarray(inputs.z, dtype=float)
    zhat = np.asarray(inputs.zhat, dtype=float)
    d = np.asarray(inputs.d, dtype=float)
    pi = np.asarray(pi, dtype=float)
    c_tilde = np.asarray(c_tilde, dtype=float)
    consumption = (-(1.0 - g) * c_tilde
                   + prefs.delta * th * c_tilde ** (1.0 - 1.0 / prefs.psi) * safe_exp(-d / th))
    portfolio = ((1.0 - g) * pi * (loc.lam + loc.sigma * (loc.rho * z + loc.rhohat * zhat))
                 - g * (1.0 - g) / 2.0 * pi ** 2 * loc.sigma ** 2)
    return ((1.0 - g) * loc.r + (z ** 2 + zhat ** 2) / 2.0 - prefs.delta * th
            + consumption + portfolio)


def truncation_J(d, n: float, prefs: Preferences):
    """Exponential on d <= n, continued linearly with slope -psi/theta above n."""
    d = np.asarray(d, dtype=float)
    a = prefs.exp_rate
    lin = np.exp(a * n) + a * (d - n)
    return np.where(d <= n, safe_exp(a * np.minimum(d, n)), lin)


def truncated_Hn(n: float, inputs: GeneratorInputs, coeffs: CoefficientSet,
                 prefs: Preferences):
    if not n > 0:
        raise ValueError("truncation level n must be positive")
    loc = local_coefficients(inputs.y, coeffs, prefs)
    return (_quadratic_part(np.asarray(inputs.z, float), np.asarray(inputs.zhat, float), loc, prefs)
            + _exp_coefficient(prefs) * truncation_J(inputs.d, n, prefs))


def upper_bound_H(d, z, zhat, constants: MarketConstants, prefs: Preferences):
    """Linear-in-d generator dominating every truncated generator."""
    z = np.asarray(z, dtype=float)
    zhat = np.asarray(zhat, dtype=float)
    return 1.5 * (z ** 2 + zhat ** 2) - prefs.delta_psi * np.asarray(d, dtype=float) + constants.c1


def phi_truncation(d, c_bar: float, prefs: Preferences):
    """Lipschitz replacement of exp(-(psi/theta) d) outside [-c_bar, c_bar]."""
    if not c_bar > 0:
        raise ValueError("c_bar must be positive")
    d = np.asarray(d, dtype=float)
    a = prefs.exp_rate
    inner = np.exp(a * np.clip(d, -c_bar, c_bar))
    upper = d + (np.exp(a * c_bar) - c_bar)
    lower = d + (np.exp(-a * c_bar) + c_bar)
    return np.where(d > c_bar, upper, np.where(d < -c_bar, lower, inner))


def phi_derivative(d, c_bar: float, prefs: Preferences):
    d = np.asarray(d, dtype=float)
    a = prefs.exp_rate
    return np.where(np.abs(d) <= c_bar, a * np.exp(a * np.clip(d, -c_bar, c_bar)), 1.0)


def pde_generator_G(y, d, z, zhat, coeffs: CoefficientSet, prefs: Preferences):
    """Generator of the elliptic problem, for y-only coefficients."""
    return generator_H(GeneratorInputs(d, z, zhat, y), coeffs, prefs)


def pde_generator_phi(y, d, z, zhat, coeffs: CoefficientSet, prefs: Preferences,
                      c_bar: float, with_derivatives: bool = False):
    """G with the exponential replaced by ``phi_truncation`` at level c_bar.

    With ``with_derivatives`` also returns dG/dd, dG/dz and dG/dzhat,
    which the Newton iteration needs.
    """
    loc = local_coefficients(y, coeffs, prefs)
    z = np.asarray(z, dtype=float)
    zhat = np.asarray(zhat, dtype=float)
    ce = _exp_coefficient(prefs)
    G = _quadratic_part(z, zhat, loc, prefs) + ce * phi_truncation(d, c_bar, prefs)
    if not with_derivatives:
        return G
    g = prefs.gamma
    kappa = (1.0 - g) / g
    ratio = loc.lam / loc.sigma
    dG_dd = ce * phi_derivative(d, c_bar, prefs)
    dG_dz = loc.M * z + kappa * ratio * loc.rho + kappa * loc.rho * loc.rhohat * zhat
    dG_dzhat = loc.Mhat * zhat + kappa * ratio * loc.rhohat + kappa * loc.rho * loc.rhohat * z
    return G, dG_dd, dG_dz, dG_dzhat
