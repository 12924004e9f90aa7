"""Exit law of the zero-mean return from the band (-L/2, L/2) under Heston
variance with rho = 0, and the exponential-moment checker built on it.

The series lives in scaled time s = alpha t and scaled variance
v = 2 alpha y / k^2.  Survival is

    S = sum_n 4 (-1)^n / (pi (2n+1)) exp(-A_n(s) - B_n(s) v) cos((2n+1) pi w / L)

and the density per unit physical time is ``time_scale`` (= alpha) times
-dS/ds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .model import HestonParams, MarketConstants, ParameterError, Preferences

logger = logging.getLogger(__name__)

DEFAULT_TERMS = 64
DEFAULT_TOL = 1e-10
MAX_TERMS = 1 << 15
Q_LADDER = (1.01, 1.1, 1.5, 2.0)


class SeriesConvergenceError(ArithmeticError):
    def __init__(self, tail: float, n_terms: int, tol: float):
        super().__init__(f"series tail estimate {tail:.3e} exceeds {tol:.1e} with {n_terms} terms")
        self.tail = tail
        self.n_terms = n_terms


@dataclass(frozen=True)
class ExitLaw:
    params: HestonParams
    L: float
    n_terms: int = DEFAULT_TERMS
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"L must be positive (got {self.L})")
        if self.n_terms < 1:
            raise ParameterError("n_terms must be at least 1")
        if self.params.rho != 0:
            raise ParameterError("the exit-law series requires rho = 0")

    @property
    def mu(self) -> float:
        p = self.params
        return 2.0 * p.alpha * p.m2 / p.k2

    @property
    def time_scale(self) -> float:
        """ds/dt for the series argument s."""
        return self.params.alpha

    def index(self, n_terms: Optional[int] = None) -> np.ndarray:
        return np.arange(self.n_terms if n_terms is None else n_terms)

    def beta_n(self, n):
        p = self.params
        return p.k / p.alpha * (2 * np.asarray(n) + 1) * np.pi

    def delta_n(self, n):
        return np.sqrt(1.0 + (self.beta_n(n) / self.L) ** 2)

    def eps_n(self, n):
        p = self.params
        return ((2 * np.asarray(n) + 1) * np.pi / (math.sqrt(2 * p.alpha) * self.L)) ** 2 * p.eps

    def with_terms(self, n_terms: int) -> "ExitLaw":
        return ExitLaw(self.params, self.L, n_terms, self.tol)


def exit_law(params: HestonParams, L: float, n_terms: int = DEFAULT_TERMS,
             tol: float = DEFAULT_TOL) -> ExitLaw:
    return ExitLaw(params, float(L), int(n_terms), float(tol))


def _denominator(D, s):
    return (D + 1.0) + (D - 1.0) * np.exp(-D * s)


def riccati_Bn(n, s, law: ExitLaw):
    """Closed-form solution of B' = -B - B^2 + (beta_n / 2L)^2, B(0) = 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    D = law.delta_n(n)
    c = law.beta_n(n) ** 2 / (2.0 * law.L ** 2)
    return c * (-np.expm1(-D * s)) / _denominator(D, s)


def amplitude_An(n, s, law: ExitLaw):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    p = law.params
    D = law.delta_n(n)
    # log of ((D+1) + (D-1) e^{-Ds}) / (2D), written to stay accurate near s = 0
    log_term = np.log1p((D - 1.0) * np.expm1(-D * s) / (2.0 * D))
    return law.mu * log_term + (p.alpha * p.m2 * (D - 1.0) / p.k2 + law.eps_n(n)) * s


def _terms(w, y, s, law: ExitLaw, n_terms: int, density: bool):
    """Series terms with the index along axis 0 (n_terms + 1 rows)."""
    p = law.params
    n = np.arange(n_terms + 1).reshape((-1,) + (1,) * np.ndim(s))
    v = 2.0 * p.alpha * y / p.k2
    A = amplitude_An(n, s, law)
    B = riccati_Bn(n, s, law)
    coef = 4.0 * (-1.0) ** n / (np.pi * (2 * n + 1))
    base = coef * np.exp(-A - B * v) * np.cos((2 * n + 1) * np.pi * w / law.L)
    if not density:
        return base
    half = (law.beta_n(n) / (2.0 * law.L)) ** 2
    rate = (2.0 * p.alpha / p.k2) * ((p.m2 - y) * B + y * (half - B * B)) + law.eps_n(n)
    return base * rate


def _series(w, y, t, law: ExitLaw, density: bool):
    w, y, t = np.broadcast_arrays(np.asarray(w, float), np.asarray(y, float),
                                  np.asarray(t, float))
    if np.any(np.abs(w) > law.L / 2 + 1e-15):
        raise ValueError("w must lie in [-L/2, L/2]")
    if np.any(y <= 0):
        raise ValueError("y must be positive")
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = np.zeros(w.shape)
    at_zero = t == 0
    live = ~at_zero
    if np.any(live):
        s = law.time_scale * t[live]
        terms = _terms(w[live], y[live], s, law, law.n_terms, density)
        tail = float(np.max(np.abs(terms[-1])))
        if tail > law.tol:
            raise SeriesConvergenceError(tail, law.n_terms, law.tol)
        out[live] = np.sum(terms[:-1], axis=0)
    if not density:
        out[at_zero] = np.where(np.abs(w[at_zero]) < law.L / 2, 1.0, 0.0)
    return out


def survival(w, y, t, law: ExitLaw):
    """P(exit time > t) for a start at (w, y), clamped to [0, 1]."""
    s = _series(w, y, t, law, density=False)
    edge = np.abs(np.broadcast_to(np.asarray(w, float), s.shape)) >= law.L / 2
    s = np.where(edge, 0.0, s)
    out = np.clip(s, 0.0, 1.0)
    return out if out.ndim else float(out)


def exit_density(w, y, t, law: ExitLaw):
    """Density of the exit time per unit physical time."""
    out = law.time_scale * _series(w, y, t, law, density=True)
    return out if out.ndim else float(out)


def _grow(fn, w, y, t, law: ExitLaw):
    n = law.n_terms
    while True:
        try:
            return fn(w, y, t, law.with_terms(n))
        except SeriesConvergenceError:
            if n >= MAX_TERMS:
                raise
            n *= 2


def exit_cdf(w, y, t, law: ExitLaw):
    """1 - survival, doubling the series length until the tail test passes."""
    return 1.0 - np.asarray(_grow(survival, w, y, t, law))


def survival_adaptive(w, y, t, law: ExitLaw):
    return _grow(survival, w, y, t, law)


def density_adaptive(w, y, t, law: ExitLaw):
    return _grow(exit_density, w, y, t, law)


def tail_rate(law: ExitLaw) -> float:
    """Decay rate of the exit density per unit physical time (n = 0 term)."""
    p = law.params
    D0 = float(law.delta_n(0))
    return law.time_scale * (p.alpha * p.m2 * (D0 - 1.0) / p.k2 + float(law.eps_n(0)))


@dataclass
class MomentReport:
    q_used: float
    integral_1: float
    integral_2: float
    tail_rate: float
    growth_rate_1: float
    growth_rate_2: float
    verdict_1: str
    verdict_2: str
    start: tuple = (0.0, 0.04)

    @property
    def verdict(self) -> str:
        both = self.verdict_1 == self.verdict_2 == "Verified"
        return "Verified" if both else "NotVerified"

    def as_dict(self) -> dict:
        return {
            "q_used": self.q_used,
            "integral_1": self.integral_1,
            "integral_2": self.integral_2,
            "tail_rate": self.tail_rate,
            "growth_rate_1": self.growth_rate_1,
            "growth_rate_2": self.growth_rate_2,
            "verdict_1": self.verdict_1,
            "verdict_2": self.verdict_2,
            "verdict": self.verdict,
            "start": list(self.start),
        }


def growth_rates(prefs: Preferences, constants: MarketConstants, c_tilde: float,
                 zhat_sq: float, q: float):
    """Coefficients of tau in the two exponential moments, with the
    integral of Z~^2 over [0, tau] bounded by zhat_sq * tau."""
    g = prefs.gamma
    pp, pm = prefs.p_plus, prefs.p_minus
    C = constants.c_lam_sig
    g1 = (q * (2 * constants.r_bar * pp + (pp + 4 * pp ** 2 / g ** 2) * C)
          + 4 * q * pp ** 2 / g ** 2 * zhat_sq)
    g2 = (-pm * prefs.delta / (1 - 1 / prefs.psi) + 2 * constants.r_under * pm
          - 2 * pm * prefs.delta_psi * math.exp(prefs.exp_rate * c_tilde)
          + (abs(pm) + 4 * pm ** 2 / g ** 2) * C
          + (4 * pm ** 2 - 2 * pm) / g ** 2 * zhat_sq)
    return g1, g2


def exponential_moment(rate: float, law: ExitLaw, w: float = 0.0, y: float = 0.04,
                       rel_tol: float = 1e-10):
    """Upper bound on E[exp(rate * tau)] and a convergence flag.

    Uses E[e^{R tau}] = 1 + R int_0^inf e^{Rt} S(t) dt.  On [0, t0] the
    survival is bounded by one; beyond T the n = 0 term gives the tail
    R e^{RT} S(T) / (lambda - R).  T doubles until that tail is below
    ``rel_tol`` of the total.
    """
    lam = tail_rate(law)
    if rate >= lam:
        return math.inf, False
    if rate == 0:
        return 1.0, True
    t0 = 1e-3 / max(lam, 1.0)

    def integrand(t):
        return rate * math.exp(rate * t) * float(survival_adaptive(w, y, t, law))

    head = math.expm1(rate * t0) if rate > 0 else 0.0
    T = max(10.0 / (lam - rate), 10 * t0)
    converged = False
    acc, err_total, lo = 0.0, 0.0, t0
    for _ in range(60):
        piece, err = integrate.quad(integrand, lo, T, limit=400, epsabs=0.0, epsrel=1e-12)
        acc += piece
        err_total += err
        lo = T
        total = 1.0 + head + acc
        tail = rate * math.exp(rate * T) * float(survival_adaptive(w, y, T, law)) / (lam - rate)
        if abs(tail) <= rel_tol * abs(total):
            converged = err_total <= 1e-8 * max(abs(total), 1.0)
            return total + tail, converged
        T *= 2
    return 1.0 + head + acc, False


def moment_condition_check(prefs: Preferences, constants: MarketConstants, bounds: dict,
                           law: ExitLaw, q: float = Q_LADDER[0],
                           start: Sequence[float] = (0.0, 0.04)) -> MomentReport:
    """Check the two exponential-moment conditions at exponent ``q``.

    ``bounds`` holds ``c_tilde_sup`` and ``zhat_sq_max`` from a converged
    PDE solve (see :func:`horizon_ez.pde.sup_bounds`).
    """
    if not q > 1:
        raise ParameterError(f"q must exceed 1 (got {q})")
    try:
        c_tilde = float(bounds["c_tilde_sup"])
        zsq = float(bounds["zhat_sq_max"])
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"sup bounds missing field: {exc}") from exc
    if not (math.isfinite(c_tilde) and math.isfinite(zsq)):
        raise ParameterError("sup bounds are not finite; PDE solve did not converge")
    g1, g2 = growth_rates(prefs, constants, c_tilde, zsq, q)
    lam = tail_rate(law)
    w, y = float(start[0]), float(start[1])
    verdicts, integrals = [], []
    for g in (g1, g2):
        value, ok = exponential_moment(g, law, w, y)
        integrals.append(value)
        verdicts.append("Verified" if (g < lam and ok) else "NotVerified")
    return MomentReport(q, integrals[0], integrals[1], lam, g1, g2,
                        verdicts[0], verdicts[1], (w, y))


def scan_q(prefs: Preferences, constants: MarketConstants, bounds: dict, law: ExitLaw,
           ladder: Sequence[float] = Q_LADDER, start=(0.0, 0.04)) -> MomentReport:
    """First q on the ladder giving Verified; else the report for the last q."""
    report = None
    for q in ladder:
        report = moment_condition_check(prefs, constants, bounds, law, q, start)
        if report.verdict == "Verified":
            return report
    return report
