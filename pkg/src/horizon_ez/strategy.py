"""Optimal portfolio and consumption fields read off a PDE solution, the
fixed-horizon baseline, and wealth simulation along a state path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CoefficientSet, ParameterError, Preferences
from .pde import Solution


class OutsideDomainError(ValueError):
    pass


@dataclass
class StrategyField:
    pi_star: np.ndarray
    c_tilde_star: np.ndarray
    baseline_pi: float


def _check_inside(w, y, solution: Solution):
    if not np.all(solution.grid.domain.contains(w, y)):
        raise OutsideDomainError("evaluation point outside the closed domain")


def _portfolio(lam, sigma, rho, rhohat, z, zhat, gamma):
    return (lam + sigma * (rho * z + rhohat * zhat)) / (gamma * sigma ** 2)


def optimal_portfolio(w, y, solution: Solution, coeffs: CoefficientSet, prefs: Preferences,
                      heston_form: bool = False):
    """pi* at (w, y) from bilinearly interpolated Z and Zhat.

    ``heston_form`` uses the simplification (lam + u_w) / gamma, with u_w
    recovered as Zhat / Gamma; both routes agree for the Heston market.
    """
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_inside(w, y, solution)
    zhat = solution.at(w, y, "zhat")
    if heston_form:
        p = coeffs.heston
        if p is None:
            raise ParameterError("heston_form needs a Heston coefficient set")
        u_w = zhat / coeffs.gamma_w(w, y)
        return (p.lam + u_w) / prefs.gamma
    z = solution.at(w, y, "z")
    return _portfolio(coeffs.lam(y), coeffs.sigma(y), coeffs.rho(y), coeffs.rhohat(y),
                      z, zhat, prefs.gamma)


def optimal_consumption_ratio(w, y, solution: Solution, prefs: Preferences):
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_inside(w, y, solution)
    return prefs.delta_psi * np.exp(prefs.exp_rate * solution.at(w, y, "u"))


def fixed_horizon_portfolio(coeffs: CoefficientSet, prefs: Preferences) -> float:
    """Constant Merton weight lam / gamma of the Heston market."""
    if coeffs.heston is None:
        raise ParameterError("the fixed-horizon baseline is defined for the Heston market only")
    return coeffs.heston.lam / prefs.gamma


def strategy_field(solution: Solution, coeffs: CoefficientSet,
                   prefs: Preferences) -> StrategyField:
    """pi* and c~* on every grid node."""
    W, Y = solution.grid.mesh()
    pi = _portfolio(coeffs.lam(Y), coeffs.sigma(Y), coeffs.rho(Y), coeffs.rhohat(Y),
                    solution.z_field, solution.zhat_field, prefs.gamma)
    c = prefs.delta_psi * np.exp(prefs.exp_rate * solution.u)
    baseline = fixed_horizon_portfolio(coeffs, prefs) if coeffs.heston is not None else float("nan")
    return StrategyField(pi, c, baseline)


def simulate_wealth(state_path, strategy, x0: float, coeffs: CoefficientSet,
                    prefs: Preferences = None) -> np.ndarray:
    """Log-Euler wealth along ``state_path`` up to its exit index.

    ``strategy`` is either a :class:`Solution` (pi* and c~* are then
    interpolated from it, which needs ``prefs``) or a callable
    ``(w, y) -> (pi, c_tilde)``.
    """
    if not x0 > 0:
        raise ParameterError(f"x0 must be positive (got {x0})")
    n = state_path.exit_index
    w = state_path.w_values[:n]
    y = state_path.y_values[:n]
    dt = np.diff(state_path.times[:n + 1])
    if isinstance(strategy, Solution):
        if prefs is None:
            raise ParameterError("prefs required when the strategy is a Solution")
        sol = strategy
        ws = np.clip(w, -sol.grid.domain.half_width, sol.grid.domain.half_width)
        ys = np.clip(y, sol.grid.domain.y1, sol.grid.domain.y2)
        z, zhat = sol.at(ws, ys, "z"), sol.at(ws, ys, "zhat")
        pi = _portfolio(coeffs.lam(ys), coeffs.sigma(ys), coeffs.rho(ys), coeffs.rhohat(ys),
                        z, zhat, prefs.gamma)
        c = prefs.delta_psi * np.exp(prefs.exp_rate * sol.at(ws, ys, "u"))
    else:
        pi, c = strategy(w, y)
        pi = np.broadcast_to(np.asarray(pi, float), w.shape)
        c = np.broadcast_to(np.asarray(c, float), w.shape)
    yp = np.maximum(y, 0.0)
    sig = coeffs.sigma(yp)
    lam = coeffs.lam(yp)
    noise = state_path.noise[:n]
    dB = coeffs.rho(yp) * noise[:, 0] + coeffs.rhohat(yp) * noise[:, 1]
    # the final step may be partial; scale its noise to the shortened step
    full = state_path.dt
    scale = np.sqrt(np.clip(dt / full, 0.0, 1.0))
    log_inc = (coeffs.r(yp) + pi * lam - c - 0.5 * pi ** 2 * sig ** 2) * dt + pi * sig * dB * scale
    return x0 * np.exp(np.concatenate([[0.0], np.cumsum(log_inc)]))
