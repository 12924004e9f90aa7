"""Preferences, market coefficients and the scalar market constants.

The concrete market is the (epsilon-modified) Heston model with the
zero-mean return process as second state variable:

    dY = -alpha (Y - m2) dt + k sqrt(Y) dW
    dS / S = (r + lam (Y + eps)) dt + sqrt(Y + eps) dW_rho
    dWret = sqrt(Y + eps) dW_rho

Everything downstream only sees a :class:`CoefficientSet`, so other
y-only markets can be plugged in by building one by hand.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]
ArrayFn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]

SCAN_POINTS = 1024


class ParameterError(ValueError):
    """A model parameter lies outside its admissible range."""


@dataclass(frozen=True)
class Preferences:
    """Epstein-Zin preferences with risk aversion and EIS both above one.

    Attributes:
        gamma: relative risk aversion.
        psi: elasticity of intertemporal substitution.
        delta: discount rate.
    """

    gamma: float
    psi: float
    delta: float

    def __post_init__(self):
        if not self.gamma > 1:
            raise ParameterError(f"gamma must exceed 1 (got {self.gamma})")
        if not self.psi > 1:
            raise ParameterError(f"psi must exceed 1 (got {self.psi})")
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive (got {self.delta})")

    @property
    def theta(self) -> float:
        return (1.0 - self.gamma) / (1.0 - 1.0 / self.psi)

    @property
    def p_plus(self) -> float:
        return 2.0 * (1.0 - 1.0 / self.psi)

    @property
    def p_minus(self) -> float:
        return 2.0 * (2.0 - 1.0 / self.theta) * (1.0 - self.gamma)

    @property
    def exp_rate(self) -> float:
        """The positive rate -psi/theta in exp(-(psi/theta) d)."""
        return -self.psi / self.theta

    @property
    def delta_psi(self) -> float:
        return self.delta ** self.psi


def new_preferences(gamma: float, psi: float, delta: float) -> Preferences:
    return Preferences(float(gamma), float(psi), float(delta))


@dataclass(frozen=True)
class HestonParams:
    """Parameters of the epsilon-modified Heston market.

    ``k`` is the vol-of-vol (so ``k**2`` enters the variance diffusion) and
    ``lam`` is the slope of the excess drift ``lam * (Y + eps)``.
    """

    alpha: float
    k: float
    m2: float
    r: float
    lam: float
    eps: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "k", "m2"):
            value = getattr(self, name)
            if not value > 0:
                raise ParameterError(f"{name} must be positive (got {value})")
        if not self.eps >= 0:
            raise ParameterError(f"eps must be nonnegative (got {self.eps})")
        if not -1.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [-1, 1] (got {self.rho})")

    @property
    def k2(self) -> float:
        return self.k * self.k

    @classmethod
    def from_k2(cls, alpha, k2, m2, r, lam, eps=0.0, rho=0.0) -> "HestonParams":
        if not k2 > 0:
            raise ParameterError(f"k2 must be positive (got {k2})")
        return cls(alpha, float(np.sqrt(k2)), m2, r, lam, eps, rho)


PAPER_PREFERENCES = dict(gamma=2.0, psi=1.5, delta=0.08)
PAPER_MARKET = dict(alpha=5.0, k2=0.25, m2=0.0225, r=0.05, lam=0.47)


def paper_preferences() -> Preferences:
    return new_preferences(**PAPER_PREFERENCES)


def paper_heston(eps: float = 0.0) -> HestonParams:
    return HestonParams.from_k2(eps=eps, **PAPER_MARKET)


def validate_feller(params: HestonParams) -> bool:
    """True iff 2 alpha m2 > k^2."""
    if not params.alpha > 0:
        raise ParameterError(f"alpha must be positive (got {params.alpha})")
    return 2.0 * params.alpha * params.m2 > params.k2


@dataclass(frozen=True)
class RectDomain:
    """The rectangle (-L/2, L/2) x (y1, y2) in (return, variance) space."""

    L: float
    y1: float
    y2: float

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError(f"L must be positive (got {self.L})")
        if not self.y1 > 0:
            raise ParameterError(f"y1 must be positive (got {self.y1})")
        if not self.y2 > self.y1:
            raise ParameterError(f"y2 must exceed y1 (got y1={self.y1}, y2={self.y2})")

    @property
    def half_width(self) -> float:
        return 0.5 * self.L

    def contains(self, w, y) -> np.ndarray:
        """Closed-rectangle membership."""
        w = np.asarray(w, dtype=float)
        y = np.asarray(y, dtype=float)
        return (np.abs(w) <= self.half_width) & (y >= self.y1) & (y <= self.y2)

    def interior(self, w, y) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        y = np.asarray(y, dtype=float)
        return (np.abs(w) < self.half_width) & (y > self.y1) & (y < self.y2)


@dataclass(frozen=True)
class CoefficientSet:
    """Market and state coefficients.

    ``r, lam, sigma, rho, rhohat, a, b`` are functions of the variance
    state y alone; ``alpha_w, beta_w, gamma_w`` (drift and the two
    diffusion loadings of the return state) are functions of (w, y).
    All callables must accept and return numpy arrays.

    ``heston`` is set when the set was built by :func:`heston_coefficients`;
    a few operations (closed-form suprema, the fixed-horizon baseline) use it.
    """

    r: ArrayFn
    lam: ArrayFn
    sigma: ArrayFn
    rho: ArrayFn
    rhohat: ArrayFn
    a: ArrayFn
    b: ArrayFn
    alpha_w: ArrayFn2
    beta_w: ArrayFn2
    gamma_w: ArrayFn2
    heston: Optional[HestonParams] = None


def _const(value: float) -> ArrayFn:
    return lambda y: np.full(np.shape(y), value, dtype=float)


def _const2(value: float) -> ArrayFn2:
    return lambda w, y: np.full(np.broadcast(w, y).shape, value, dtype=float)


_feller_warned = set()


def heston_coefficients(params: HestonParams) -> CoefficientSet:
    """Coefficient functions of the epsilon-modified Heston market."""
    if not validate_feller(params) and params not in _feller_warned:
        _feller_warned.add(params)
        logger.warning(
            "Feller condition fails (2*alpha*m2=%.6g <= k^2=%.6g); "
            "variance simulation uses full truncation",
            2 * params.alpha * params.m2, params.k2,
        )
    alpha, k, m2, lam, eps = params.alpha, params.k, params.m2, params.lam, params.eps
    rho = params.rho
    rhohat = float(np.sqrt(1.0 - rho * rho))

    def sigma(y):
        return np.sqrt(np.asarray(y, dtype=float) + eps)

    return CoefficientSet(
        r=_const(params.r),
        lam=lambda y: lam * (np.asarray(y, dtype=float) + eps),
        sigma=sigma,
        rho=_const(rho),
        rhohat=_const(rhohat),
        a=lambda y: -alpha * (np.asarray(y, dtype=float) - m2),
        b=lambda y: k * np.sqrt(np.maximum(np.asarray(y, dtype=float), 0.0)),
        alpha_w=_const2(0.0),
        beta_w=lambda w, y: rho * sigma(np.broadcast_to(y, np.broadcast(w, y).shape)),
        gamma_w=lambda w, y: rhohat * sigma(np.broadcast_to(y, np.broadcast(w, y).shape)),
        heston=params,
    )


@dataclass(frozen=True)
class MarketConstants:
    c_lam_sig: float
    r_bar: float
    r_under: float
    c1: float


def _c1(prefs: Preferences, r_under: float, c_lam_sig: float) -> float:
    g = prefs.gamma
    c1 = (1.0 - g) * (r_under - prefs.delta / (1.0 - 1.0 / prefs.psi))
    if g > 2.0:
        c1 += (1.0 - g) * (2.0 - g) / (2.0 * g * g) * c_lam_sig
    return c1


def market_constants(coeffs: CoefficientSet, domain: RectDomain,
                     prefs: Preferences, n_scan: int = SCAN_POINTS) -> MarketConstants:
    """Suprema/infima of the market coefficients over the closed domain.

    The Heston instance is handled in closed form (lam/sigma squared equals
    lam^2 (y + eps), increasing in y; r is constant).  Anything else is
    scanned on ``n_scan`` equispaced points of [y1, y2].
    """
    if coeffs.heston is not None:
        p = coeffs.heston
        c_lam_sig = p.lam ** 2 * (domain.y2 + p.eps)
        r_bar = r_under = p.r
    else:
        y = np.linspace(domain.y1, domain.y2, n_scan)
        ratio_sq = (coeffs.lam(y) / coeffs.sigma(y)) ** 2
        r = coeffs.r(y)
        if not (np.all(np.isfinite(ratio_sq)) and np.all(np.isfinite(r))):
            raise ParameterError("non-finite coefficient value on the domain")
        c_lam_sig = float(ratio_sq.max())
        r_bar = float(r.max())
        r_under = float(r.min())
    values = (c_lam_sig, r_bar, r_under)
    if not all(np.isfinite(values)):
        raise ParameterError("non-finite coefficient value on the domain")
    return MarketConstants(c_lam_sig, r_bar, r_under, _c1(prefs, r_under, c_lam_sig))
