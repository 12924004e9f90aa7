"""Monte Carlo oracles for the exit law, the PDE solution and the utility
recursion.

Each path owns a counter-based Philox stream derived from
``SeedSequence(seed, spawn_key=(path_index,))`` and consumes it in fixed
blocks, so results do not depend on scheduling and matched seeds give
the same noise in band and rectangle mode.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import stats

from .generators import aggregator_f, pde_generator_G
from .model import CoefficientSet, HestonParams, Preferences, RectDomain, heston_coefficients
from .passage import ExitLaw, exit_cdf
from .pde import Solution

logger = logging.getLogger(__name__)

BLOCK = 512
MIN_KS_SAMPLES = 10_000
MAX_STEPS = 50_000_000

SIDE_NONE, SIDE_W_UP, SIDE_W_DOWN, SIDE_Y_LOW, SIDE_Y_HIGH = 0, 1, 2, 3, 4
SIDE_NAMES = {SIDE_NONE: "none", SIDE_W_UP: "w_upper", SIDE_W_DOWN: "w_lower",
              SIDE_Y_LOW: "y_lower", SIDE_Y_HIGH: "y_upper"}

_threads = os.environ.get("HORIZON_EZ_THREADS")
if _threads:
    numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))


def path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


@numba.njit(cache=True)
def _bilinear(tab, w0, hw, y0, hy, w, y):
    nw, ny = tab.shape
    fi = (w - w0) / hw
    fj = (y - y0) / hy
    i = min(max(int(math.floor(fi)), 0), nw - 2)
    j = min(max(int(math.floor(fj)), 0), ny - 2)
    a = min(max(fi - i, 0.0), 1.0)
    b = min(max(fj - j, 0.0), 1.0)
    return ((1 - a) * (1 - b) * tab[i, j] + a * (1 - b) * tab[i + 1, j]
            + (1 - a) * b * tab[i, j + 1] + a * b * tab[i + 1, j + 1])


@numba.njit(cache=True)
def _cross_prob(x0, x1, barrier, var_dt):
    # probability a Brownian bridge between x0 and x1 touches the barrier
    if var_dt <= 0.0:
        return 0.0
    return math.exp(-2.0 * (barrier - x0) * (barrier - x1) / var_dt)


@numba.njit(cache=True)
def _advance(state, normals, uniforms, dt, alpha, k, m2, eps, rho, rhohat,
             half, y1, y2, rect, bridge, gtab, g_w0, g_hw, g_y0, g_hy, use_g,
             rec_w, rec_y, rec_t, record):
    """Step one path through a block of noise.

    ``state`` = [w, y, t, integral, side, steps]; updated in place.
    Returns the number of steps consumed (the last one may be partial).
    """
    sq = math.sqrt(dt)
    w, y, t, acc = state[0], state[1], state[2], state[3]
    n = normals.shape[0]
    for s in range(n):
        yp = y if y > 0.0 else 0.0
        sig2 = yp + eps
        sig = math.sqrt(sig2)
        dW = sq * normals[s, 0]
        dWh = sq * normals[s, 1]
        w_new = w + sig * (rho * dW + rhohat * dWh)
        y_new = y - alpha * (yp - m2) * dt + k * math.sqrt(yp) * dW
        g_here = _bilinear(gtab, g_w0, g_hw, g_y0, g_hy, w, y) if use_g else 0.0

        frac = 2.0
        side = 0
        # faces left by the endpoint: linear crossing time
        if w_new >= half:
            f = (half - w) / (w_new - w)
            if f < frac:
                frac, side = f, 1
        elif w_new <= -half:
            f = (-half - w) / (w_new - w)
            if f < frac:
                frac, side = f, 2
        if rect:
            if y_new <= y1:
                f = (y1 - y) / (y_new - y)
                if f < frac:
                    frac, side = f, 3
            elif y_new >= y2:
                f = (y2 - y) / (y_new - y)
                if f < frac:
                    frac, side = f, 4
        if side == 0 and bridge:
            # crossings hidden inside the step
            vw = sig2 * dt
            if uniforms[s, 0] < _cross_prob(w, w_new, half, vw):
                frac, side = 0.5, 1
            elif uniforms[s, 0] > 1.0 - _cross_prob(w, w_new, -half, vw):
                frac, side = 0.5, 2
            elif rect:
                vy = k * k * yp * dt
                p_lo = _cross_prob(y, y_new, y1, vy)
                p_hi = _cross_prob(y, y_new, y2, vy)
                if uniforms[s, 1] < p_lo:
                    frac, side = 0.5, 3
                elif uniforms[s, 1] > 1.0 - p_hi:
                    frac, side = 0.5, 4
        if side != 0:
            if frac < 0.0:
                frac = 0.0
            h = frac * dt
            acc += g_here * h
            t += h
            if side == 1:
                w, y = half, y + frac * (y_new - y)
            elif side == 2:
                w, y = -half, y + frac * (y_new - y)
            elif side == 3:
                w, y = w + frac * (w_new - w), y1
            elif side == 4:
                w, y = w + frac * (w_new - w), y2
            if record:
                rec_w[s + 1] = w
                rec_y[s + 1] = y
                rec_t[s + 1] = t
            state[0], state[1], state[2], state[3] = w, y, t, acc
            state[4] = side
            state[5] += s + 1
            return s + 1
        acc += g_here * dt
        t += dt
        w, y = w_new, y_new
        if record:
            rec_w[s + 1] = w
            rec_y[s + 1] = y
            rec_t[s + 1] = t
    state[0], state[1], state[2], state[3] = w, y, t, acc
    state[5] += n
    return n


@dataclass
class StatePath:
    times: np.ndarray
    w_values: np.ndarray
    y_values: np.ndarray
    exit_index: int
    exit_side: str
    seed: int
    dt: float
    noise: np.ndarray = field(repr=False, default=None)

    @property
    def exit_time(self) -> float:
        return float(self.times[self.exit_index])


@dataclass
class VerificationReport:
    n_paths: int
    dt: float
    fk_paths: int = 0
    seed: int = 0
    ks_distance: Optional[float] = None
    fk_residual: Optional[float] = None
    fk_stderr: Optional[float] = None
    exit_faces: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)
    verdict: str = "Inconclusive"

    def as_dict(self) -> dict:
        return {"n_paths": self.n_paths, "dt": self.dt, "fk_paths": self.fk_paths,
                "seed": self.seed, "ks_distance": self.ks_distance,
                "fk_residual": self.fk_residual, "fk_stderr": self.fk_stderr,
                "exit_faces": dict(self.exit_faces), "probes": list(self.probes),
                "verdict": self.verdict}


_EMPTY_TAB = np.zeros((2, 2))
_EMPTY_REC = np.zeros(1)


class _Stepper:
    def __init__(self, params: HestonParams, domain: RectDomain, dt: float, rect: bool,
                 bridge: bool, gfield=None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.p, self.domain, self.dt = params, domain, float(dt)
        self.rect, self.bridge = bool(rect), bool(bridge)
        self.rhohat = math.sqrt(1.0 - params.rho ** 2)
        if gfield is None:
            self.g = (_EMPTY_TAB, 0.0, 1.0, 0.0, 1.0, False)
        else:
            tab, w0, hw, y0, hy = gfield
            self.g = (np.ascontiguousarray(tab, dtype=float), w0, hw, y0, hy, True)

    def run(self, w0, y0, seed, index, record=False):
        rng = path_rng(seed, index)
        state = np.array([w0, y0, 0.0, 0.0, 0.0, 0.0])
        p, d = self.p, self.domain
        ws, ys, ts, noise = [np.array([w0])], [np.array([y0])], [np.array([0.0])], []
        while state[4] == 0:
            normals = rng.standard_normal((BLOCK, 2))
            uniforms = rng.random((BLOCK, 2))
            if record:
                rw, ry, rt = np.empty(BLOCK + 1), np.empty(BLOCK + 1), np.empty(BLOCK + 1)
            else:
                rw = ry = rt = _EMPTY_REC
            used = _advance(state, normals, uniforms, self.dt, p.alpha, p.k, p.m2, p.eps,
                            p.rho, self.rhohat, d.half_width, d.y1, d.y2, self.rect,
                            self.bridge, *self.g, rw, ry, rt, record)
            if record:
                ws.append(rw[1:used + 1])
                ys.append(ry[1:used + 1])
                ts.append(rt[1:used + 1])
                noise.append(normals[:used] * math.sqrt(self.dt))
            if state[5] > MAX_STEPS:
                raise RuntimeError("path did not exit within the step budget")
        if record:
            return state, (np.concatenate(ts), np.concatenate(ws), np.concatenate(ys),
                           np.concatenate(noise))
        return state, None


def _check_start(w0, y0, domain: RectDomain, rect: bool):
    inside = abs(w0) < domain.half_width and (not rect or domain.y1 < y0 < domain.y2)
    if not inside or y0 <= 0:
        raise ValueError(f"start ({w0}, {y0}) must lie strictly inside the domain")


def simulate_state(w0, y0, params: HestonParams, domain: RectDomain, dt: float, seed: int,
                   index: int = 0, band: bool = False, bridge: bool = True) -> StatePath:
    """One full (return, variance) path up to exit from the rectangle
    (or from the band when ``band``)."""
    _check_start(w0, y0, domain, not band)
    st = _Stepper(params, domain, dt, rect=not band, bridge=bridge)
    state, (t, w, y, noise) = st.run(w0, y0, seed, index, record=True)
    return StatePath(times=t, w_values=w, y_values=y, exit_index=len(t) - 1,
                     exit_side=SIDE_NAMES[int(state[4])], seed=seed, dt=float(dt), noise=noise)


def sample_exit_times(n_paths: int, w0, y0, params: HestonParams, domain: RectDomain,
                      dt: float, seed: int, band: bool = True, bridge: bool = True,
                      return_sides: bool = False):
    """Exit times of ``n_paths`` independent paths.

    ``band`` ignores the variance walls, giving the exit time of the
    return from (-L/2, L/2) alone.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    _check_start(w0, y0, domain, not band)
    st = _Stepper(params, domain, dt, rect=not band, bridge=bridge)
    times = np.empty(n_paths)
    sides = np.empty(n_paths, dtype=np.int64)
    for i in range(n_paths):
        state, _ = st.run(w0, y0, seed, i)
        times[i] = state[2]
        sides[i] = int(state[4])
    return (times, sides) if return_sides else times


def face_frequencies(sides) -> dict:
    sides = np.asarray(sides)
    return {SIDE_NAMES[s]: float(np.mean(sides == s)) for s in (1, 2, 3, 4)}


def empirical_vs_series(samples, law: ExitLaw, w0, y0, cdf=None) -> float:
    """Kolmogorov-Smirnov distance between the samples and the series CDF."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < MIN_KS_SAMPLES:
        raise ValueError(f"need at least {MIN_KS_SAMPLES} samples (got {samples.size})")
    if cdf is None:
        def cdf(t):
            return exit_cdf(w0, y0, t, law)
    return float(stats.kstest(samples, cdf).statistic)


def generator_table(solution: Solution, coeffs: CoefficientSet, prefs: Preferences):
    """G(y, u, Z, Zhat) on the solution grid, packed for the path kernel."""
    g = solution.grid
    W, Y = g.mesh()
    tab = pde_generator_G(Y, solution.u, solution.z_field, solution.zhat_field, coeffs, prefs)
    return tab, float(g.w[0]), g.hw, float(g.y[0]), g.hy


def _fk_estimate(solution, params, gfield, n_paths, dt, seed, w0, y0, bridge):
    st = _Stepper(params, solution.grid.domain, dt, rect=True, bridge=bridge, gfield=gfield)
    vals = np.empty(n_paths)
    for i in range(n_paths):
        state, _ = st.run(w0, y0, seed, i)
        vals[i] = state[3]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))


def feynman_kac_check(solution: Solution, params: HestonParams, prefs: Preferences,
                      n_paths: int, dt: float, seed: int,
                      probe: Sequence[float] = (0.0, 0.04), bridge: bool = True,
                      g_values: Optional[np.ndarray] = None) -> dict:
    """Compare u at a probe with the mean pathwise integral of G up to exit.

    Two step sizes (dt and dt/2, independent streams) give the bias
    allowance C dt with C = 2 |m_dt - m_dt/2| / dt.  ``g_values`` replaces
    the generator evaluated on the grid (used for manufactured checks).
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    w0, y0 = float(probe[0]), float(probe[1])
    _check_start(w0, y0, solution.grid.domain, True)
    u0 = float(solution.at(w0, y0))
    gfield = generator_table(solution, heston_coefficients(params), prefs)
    if g_values is not None:
        gfield = (np.asarray(g_values, float),) + gfield[1:]
    m1, se1 = _fk_estimate(solution, params, gfield, n_paths, dt, seed, w0, y0, bridge)
    m2, se2 = _fk_estimate(solution, params, gfield, n_paths, dt / 2, seed + 1, w0, y0, bridge)
    C = 2.0 * abs(m1 - m2) / dt
    r1, r2 = abs(u0 - m1), abs(u0 - m2)
    allowance = 3.0 * se1 + C * dt
    return {
        "probe": [w0, y0], "u": u0,
        "mc_mean": m1, "fk_residual": r1, "fk_stderr": se1,
        "mc_mean_half_dt": m2, "fk_residual_half_dt": r2, "fk_stderr_half_dt": se2,
        "bias_constant": C, "allowance": allowance,
        "passed": bool(r1 <= allowance),
        "bias_shrinks": bool(r2 <= r1 + 3.0 * math.hypot(se1, se2)),
    }


def utility_ode_eval(c_const: float, T: float, terminal_v: float, prefs: Preferences,
                     dt: float) -> float:
    """V(0) for dV/dt = -f(c, V), V(T) = terminal_v, by backward RK4."""
    if not c_const > 0:
        raise ValueError("c_const must be positive")
    if not terminal_v <= 0:
        raise ValueError("terminal_v must be nonpositive")
    if not (T >= 0 and dt > 0):
        raise ValueError("need T >= 0 and dt > 0")
    steps = max(1, int(math.ceil(T / dt - 1e-12)))
    h = T / steps

    # integrate backward in time: dV/ds = f(c, V) with s = T - t
    def rhs(v):
        return float(aggregator_f(c_const, min(v, 0.0), prefs))

    v = float(terminal_v)
    for _ in range(steps):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * h * k1)
        k3 = rhs(v + 0.5 * h * k2)
        k4 = rhs(v + h * k3)
        v += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return v
