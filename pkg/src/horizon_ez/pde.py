"""Finite-difference solver for the elliptic Dirichlet problem

    L u + G(y, u, b u_y + beta u_w, Gamma u_w) = 0   in (-L/2, L/2) x (y1, y2),
    u = 0                                         on the boundary,

where L is the generator of the (return, variance) state.  Fields are
stored as arrays of shape ``(nw + 2, ny + 2)`` indexed ``[i_w, j_y]``,
boundary nodes included.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .generators import pde_generator_G, pde_generator_phi
from .model import CoefficientSet, ParameterError, Preferences, RectDomain

logger = logging.getLogger(__name__)

MIN_NODES = 8


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


class CBarExceeded(SolverError):
    """The computed solution left the band where the phi-truncation is exact."""

    def __init__(self, max_abs: float, c_bar: float):
        super().__init__(f"max|u| = {max_abs:.6g} exceeds c_bar = {c_bar:.6g}")
        self.max_abs = max_abs
        self.c_bar = c_bar


@dataclass(frozen=True)
class Grid:
    domain: RectDomain
    nw: int
    ny: int

    @property
    def hw(self) -> float:
        return self.domain.L / (self.nw + 1)

    @property
    def hy(self) -> float:
        return (self.domain.y2 - self.domain.y1) / (self.ny + 1)

    @property
    def w(self) -> np.ndarray:
        return np.linspace(-self.domain.half_width, self.domain.half_width, self.nw + 2)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.domain.y1, self.domain.y2, self.ny + 2)

    @property
    def shape(self):
        return (self.nw + 2, self.ny + 2)

    def mesh(self):
        return np.meshgrid(self.w, self.y, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask

    def boundary_count(self) -> int:
        return 2 * (self.nw + self.ny) + 4


def build_grid(domain: RectDomain, nw: int, ny: int) -> Grid:
    if nw < MIN_NODES or ny < MIN_NODES:
        raise ParameterError(f"grid needs at least {MIN_NODES} interior nodes per axis "
                             f"(got nw={nw}, ny={ny})")
    return Grid(domain, int(nw), int(ny))


def rounded_corner_mask(grid: Grid, radius: float) -> np.ndarray:
    """Interior nodes lying outside a rectangle with rounded corners.

    ``radius`` is a fraction of each side, so the rounding is an ellipse
    quarter in physical coordinates.  Pinning these nodes to zero gives a
    smooth-boundary approximation of the rectangle.
    """
    if not 0 < radius < 0.5:
        raise ValueError("radius must lie in (0, 0.5)")
    W, Y = grid.mesh()
    d = grid.domain
    xi = (W + d.half_width) / d.L
    eta = (Y - d.y1) / (d.y2 - d.y1)
    cx = np.clip(xi, radius, 1 - radius)
    cy = np.clip(eta, radius, 1 - radius)
    outside = (xi - cx) ** 2 + (eta - cy) ** 2 > radius ** 2
    return outside & ~grid.boundary_mask()


@dataclass
class SolverOptions:
    tolerance: float = 1e-9
    max_iterations: int = 50
    damping: float = 1.0
    c_bar: float = 5.0
    c_bar_max: float = 40.0
    scheme: str = "newton"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ParameterError("damping must lie in (0, 1]")
        if self.scheme not in ("newton", "picard"):
            raise ParameterError(f"scheme must be 'newton' or 'picard' (got {self.scheme!r})")
        if not self.c_bar > 0:
            raise ParameterError("c_bar must be positive")


@dataclass
class Solution:
    grid: Grid
    u: np.ndarray
    z_field: np.ndarray
    zhat_field: np.ndarray
    c_tilde_sup: float
    zhat_sq_max: float
    residual_norm: float
    iterations: int
    c_bar: float
    scheme: str = "newton"
    _interp: dict = field(default_factory=dict, repr=False)

    def interpolator(self, name: str = "u"):
        """Bilinear interpolant of ``u``, ``z_field`` or ``zhat_field``."""
        if name not in self._interp:
            values = {"u": self.u, "z": self.z_field, "zhat": self.zhat_field}[name]
            self._interp[name] = RegularGridInterpolator(
                (self.grid.w, self.grid.y), values, method="linear",
                bounds_error=False, fill_value=None)
        return self._interp[name]

    def at(self, w, y, name: str = "u"):
        w, y = np.broadcast_arrays(np.asarray(w, float), np.asarray(y, float))
        pts = np.stack([w.ravel(), y.ravel()], axis=-1)
        return self.interpolator(name)(pts).reshape(w.shape)


class _Operators:
    """Sparse difference operators acting on the flattened interior."""

    def __init__(self, grid: Grid, coeffs: CoefficientSet):
        nw, ny, hw, hy = grid.nw, grid.ny, grid.hw, grid.hy
        W, Y = grid.mesh()
        Wi, Yi = W[1:-1, 1:-1].ravel(), Y[1:-1, 1:-1].ravel()
        self.w, self.y = Wi, Yi

        def first(n, h):
            return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * h)

        def second(n, h):
            return sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h ** 2

        Iw, Iy = sp.identity(nw), sp.identity(ny)
        self.Dw = sp.kron(first(nw, hw), Iy, format="csr")
        self.Dy = sp.kron(Iw, first(ny, hy), format="csr")
        self.Dww = sp.kron(second(nw, hw), Iy, format="csr")
        self.Dyy = sp.kron(Iw, second(ny, hy), format="csr")
        # four-point cross stencil
        self.Dwy = sp.kron(first(nw, hw), first(ny, hy), format="csr")

        self.a = np.asarray(coeffs.a(Yi), float)
        self.b = np.asarray(coeffs.b(Yi), float)
        self.aw = np.asarray(coeffs.alpha_w(Wi, Yi), float)
        self.beta = np.asarray(coeffs.beta_w(Wi, Yi), float)
        self.gam = np.asarray(coeffs.gamma_w(Wi, Yi), float)

        def dg(v):
            return sp.diags(v)

        L = (dg(self.a) @ self.Dy + dg(self.aw) @ self.Dw
             + dg(0.5 * self.b ** 2) @ self.Dyy
             + dg(0.5 * (self.beta ** 2 + self.gam ** 2)) @ self.Dww)
        if np.any(self.beta != 0):
            L = L + dg(self.b * self.beta) @ self.Dwy
        self.L = L.tocsr()
        self.Z = (dg(self.b) @ self.Dy + dg(self.beta) @ self.Dw).tocsr()
        self.Zhat = (dg(self.gam) @ self.Dw).tocsr()

    def restrict(self, keep: np.ndarray) -> "_Operators":
        out = object.__new__(_Operators)
        for name in ("L", "Z", "Zhat"):
            setattr(out, name, getattr(self, name)[keep][:, keep].tocsr())
        out.y = self.y[keep]
        return out


def _embed(v: np.ndarray, grid: Grid, keep: Optional[np.ndarray] = None) -> np.ndarray:
    u = np.zeros(grid.shape)
    inner = np.zeros(grid.nw * grid.ny)
    if keep is None:
        inner[:] = v
    else:
        inner[keep] = v
    u[1:-1, 1:-1] = inner.reshape(grid.nw, grid.ny)
    return u


def difference_stencils(u_field, grid: Grid) -> dict:
    """Central differences of a full field (boundary values included) at the
    interior nodes: first, second and four-point cross derivatives."""
    u = np.asarray(u_field, dtype=float)
    hw, hy = grid.hw, grid.hy
    c = u[1:-1, 1:-1]
    return {
        "u_w": (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * hw),
        "u_y": (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * hy),
        "u_ww": (u[2:, 1:-1] - 2 * c + u[:-2, 1:-1]) / hw ** 2,
        "u_yy": (u[1:-1, 2:] - 2 * c + u[1:-1, :-2]) / hy ** 2,
        "u_wy": (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * hw * hy),
    }


def assemble_residual(u_field, grid: Grid, coeffs: CoefficientSet, prefs: Preferences):
    """L u + G(y, u, Z, Zhat) at the interior nodes, as an (nw, ny) array.

    Works on the full field, so nonzero boundary values are honoured.
    """
    u_field = np.asarray(u_field, dtype=float)
    if u_field.shape != grid.shape:
        raise ValueError(f"field shape {u_field.shape} does not match grid {grid.shape}")
    W, Y = grid.mesh()
    Wi, Yi = W[1:-1, 1:-1], Y[1:-1, 1:-1]
    d = difference_stencils(u_field, grid)
    a, b = coeffs.a(Yi), coeffs.b(Yi)
    aw, beta, gam = coeffs.alpha_w(Wi, Yi), coeffs.beta_w(Wi, Yi), coeffs.gamma_w(Wi, Yi)
    Lu = (a * d["u_y"] + aw * d["u_w"] + 0.5 * b ** 2 * d["u_yy"]
          + 0.5 * (beta ** 2 + gam ** 2) * d["u_ww"] + b * beta * d["u_wy"])
    z = b * d["u_y"] + beta * d["u_w"]
    zhat = gam * d["u_w"]
    return Lu + pde_generator_G(Yi, u_field[1:-1, 1:-1], z, zhat, coeffs, prefs)


def gradient_fields(solution_u, grid: Grid, coeffs: CoefficientSet):
    """Z = b u_y + beta u_w and Zhat = Gamma u_w on every node.

    Central differences inside, second-order one-sided at the edges.
    """
    u = solution_u.u if isinstance(solution_u, Solution) else np.asarray(solution_u, float)
    u_w, u_y = np.gradient(u, grid.hw, grid.hy, edge_order=2)
    W, Y = grid.mesh()
    z = coeffs.b(Y) * u_y + coeffs.beta_w(W, Y) * u_w
    zhat = coeffs.gamma_w(W, Y) * u_w
    return z, zhat


def sup_bounds(solution: Solution) -> dict:
    """Grid maxima standing in for the essential suprema of u and Zhat^2."""
    return {"c_tilde_sup": float(np.max(solution.u)),
            "zhat_sq_max": float(np.max(solution.zhat_field ** 2))}


def _residual(ops, v, coeffs, prefs, c_bar, derivatives=False):
    z, zh = ops.Z @ v, ops.Zhat @ v
    out = pde_generator_phi(ops.y, v, z, zh, coeffs, prefs, c_bar, with_derivatives=derivatives)
    if not derivatives:
        return ops.L @ v + out
    G, Gd, Gz, Gzh = out
    J = ops.L + sp.diags(Gd) + sp.diags(Gz) @ ops.Z + sp.diags(Gzh) @ ops.Zhat
    return ops.L @ v + G, J.tocsc()


def _iterate(ops, coeffs, prefs, opts: SolverOptions, c_bar: float):
    v = np.zeros(ops.L.shape[0])
    res = _residual(ops, v, coeffs, prefs, c_bar)
    norm = float(np.max(np.abs(res))) if res.size else 0.0
    scheme = opts.scheme
    L_lu = None
    for it in range(1, opts.max_iterations + 1):
        if norm <= opts.tolerance:
            return v, norm, it - 1, scheme
        if scheme == "newton":
            res, J = _residual(ops, v, coeffs, prefs, c_bar, derivatives=True)
            try:
                step = spla.splu(J).solve(-res)
            except RuntimeError:
                step = None
            accepted = False
            if step is not None and np.all(np.isfinite(step)):
                t = opts.damping
                for _ in range(12):
                    trial = v + t * step
                    r_trial = _residual(ops, trial, coeffs, prefs, c_bar)
                    n_trial = float(np.max(np.abs(r_trial)))
                    if n_trial < (1 - 1e-4 * t) * norm:
                        v, res, norm, accepted = trial, r_trial, n_trial, True
                        break
                    t *= 0.5
            if not accepted:
                logger.info("Newton stalled at iteration %d (residual %.3e); switching to Picard",
                            it, norm)
                scheme = "picard"
            continue
        # Picard: L v_new = -G(v_old)
        if L_lu is None:
            L_lu = spla.splu(ops.L.tocsc())
        G = res - ops.L @ v
        v = L_lu.solve(-G)
        res = _residual(ops, v, coeffs, prefs, c_bar)
        norm = float(np.max(np.abs(res)))
        logger.debug("iteration %d (%s): residual %.3e", it, scheme, norm)
    if norm <= opts.tolerance:
        return v, norm, opts.max_iterations, scheme
    raise ConvergenceError(
        f"no convergence after {opts.max_iterations} iterations (residual {norm:.3e})")


def solve_dirichlet(grid: Grid, coeffs: CoefficientSet, prefs: Preferences,
                    opts: Optional[SolverOptions] = None,
                    pinned: Optional[np.ndarray] = None) -> Solution:
    """Solve the Dirichlet problem with the phi-truncated generator.

    If the solution leaves [-c_bar, c_bar] the level is doubled and the
    solve repeated, up to ``opts.c_bar_max``; beyond that
    :class:`CBarExceeded` is raised.  ``pinned`` marks extra nodes held at
    zero (see :func:`rounded_corner_mask`).
    """
    opts = opts or SolverOptions()
    ops = _Operators(grid, coeffs)
    keep = None
    if pinned is not None:
        keep = ~np.asarray(pinned, bool)[1:-1, 1:-1].ravel()
        ops = ops.restrict(keep)
    c_bar = opts.c_bar
    while True:
        v, norm, iters, scheme = _iterate(ops, coeffs, prefs, opts, c_bar)
        max_abs = float(np.max(np.abs(v))) if v.size else 0.0
        if max_abs <= c_bar:
            break
        if 2 * c_bar > opts.c_bar_max:
            raise CBarExceeded(max_abs, c_bar)
        logger.warning("solution reached %.3g beyond c_bar=%.3g; doubling", max_abs, c_bar)
        c_bar *= 2
    u = _embed(v, grid, keep)
    z, zhat = gradient_fields(u, grid, coeffs)
    return Solution(grid=grid, u=u, z_field=z, zhat_field=zhat,
                    c_tilde_sup=float(u.max()), zhat_sq_max=float(np.max(zhat ** 2)),
                    residual_norm=norm, iterations=iters, c_bar=c_bar, scheme=scheme)
