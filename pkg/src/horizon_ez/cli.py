"""Command-line front end: ``horizon-ez {solve,density,check-assumption,verify,strategy-export}``.

Exit status is 0 on success (Verified / Pass / Inconclusive) and 1 on
NotVerified, a failed check, a solver error or an invalid config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats

from . import generators
from .config import ConfigError, RunConfig, load_config
from .mcverify import (MIN_KS_SAMPLES, VerificationReport, empirical_vs_series,
                       face_frequencies, feynman_kac_check, sample_exit_times)
from .model import heston_coefficients, market_constants
from .passage import (SeriesConvergenceError, density_adaptive, exit_cdf, exit_law, scan_q,
                      survival_adaptive, tail_rate)
from .pde import SolverError, Solution, build_grid, gradient_fields, solve_dirichlet, sup_bounds
from .strategy import fixed_horizon_portfolio, strategy_field

logger = logging.getLogger("horizon_ez")

SOLUTION_COLUMNS = ("w", "y", "u", "Z", "Zhat", "pi_star", "c_tilde_star")
MIN_FK_PATHS = 1000


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str, header: Sequence[str], columns, footer: Optional[str] = None):
    rows = np.column_stack([np.asarray(c, float).ravel() for c in columns])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
        if footer:
            fh.write(f"# {footer}\n")


def write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def read_solution_csv(path: str, cfg: RunConfig) -> Solution:
    """Rebuild a Solution from an exported grid CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
    w, y = np.unique(data[:, 0]), np.unique(data[:, 1])
    grid = build_grid(cfg.domain, len(w) - 2, len(y) - 2)
    u = data[:, 2].reshape(grid.shape)
    coeffs = heston_coefficients(cfg.market)
    z, zhat = gradient_fields(u, grid, coeffs)
    return Solution(grid=grid, u=u, z_field=z, zhat_field=zhat, c_tilde_sup=float(u.max()),
                    zhat_sq_max=float(np.max(zhat ** 2)), residual_norm=float("nan"),
                    iterations=0, c_bar=cfg.solver.c_bar)


def _solve(cfg: RunConfig) -> Solution:
    coeffs = heston_coefficients(cfg.market)
    return solve_dirichlet(build_grid(cfg.domain, cfg.nw, cfg.ny), coeffs, cfg.prefs, cfg.solver)


def _write_grid(cfg: RunConfig, sol: Solution, name: str):
    coeffs = heston_coefficients(cfg.market)
    field = strategy_field(sol, coeffs, cfg.prefs)
    W, Y = sol.grid.mesh()
    path = os.path.join(cfg.out_dir, name)
    write_csv(path, SOLUTION_COLUMNS,
              (W, Y, sol.u, sol.z_field, sol.zhat_field, field.pi_star, field.c_tilde_star))
    return path, field


def run_solve(cfg: RunConfig) -> int:
    generators.reset_clamp_events()
    sol = _solve(cfg)
    coeffs = heston_coefficients(cfg.market)
    summary = {
        "c_tilde_sup": sol.c_tilde_sup,
        "zhat_sq_max": sol.zhat_sq_max,
        "u_min": float(sol.u.min()),
        "residual_norm": sol.residual_norm,
        "iterations": sol.iterations,
        "scheme": sol.scheme,
        "c_bar": sol.c_bar,
        "nw": sol.grid.nw,
        "ny": sol.grid.ny,
        "baseline_pi": fixed_horizon_portfolio(coeffs, cfg.prefs),
        "exp_clamp_events": generators.clamp_events(),
    }
    if "csv" in cfg.formats:
        _write_grid(cfg, sol, "solution.csv")
    if "json" in cfg.formats:
        write_json(os.path.join(cfg.out_dir, "summary.json"), summary)
    print(f"C~ = {sol.c_tilde_sup:.6g}, zhat^2 max = {sol.zhat_sq_max:.6g}, "
          f"residual = {sol.residual_norm:.3g} after {sol.iterations} iterations")
    return 0


def run_density(cfg: RunConfig, w0: float, y0: float, t_max: Optional[float],
                n_points: int) -> int:
    law = exit_law(cfg.market, cfg.domain.L)
    if not abs(w0) < cfg.domain.half_width:
        raise ConfigError(f"probe: w0={w0} must lie strictly inside (-L/2, L/2)")
    if not y0 > 0:
        raise ConfigError(f"probe: y0={y0} must be positive")
    if t_max is None:
        t_max = 12.0 / tail_rate(law)
    if n_points < 2 or not t_max > 0:
        raise ConfigError("density: need n_points >= 2 and t_max > 0")
    t = np.linspace(0.0, t_max, n_points)
    surv = np.array([survival_adaptive(w0, y0, ti, law) for ti in t])
    dens = np.array([density_adaptive(w0, y0, ti, law) for ti in t])
    integral = float(integrate.trapezoid(dens, t))
    write_csv(os.path.join(cfg.out_dir, "density.csv"), ("t", "survival", "density"),
              (t, surv, dens), footer=f"trapezoid_integral={_fmt(integral)}")
    print(f"density integral over [0, {t_max:.4g}] = {integral:.6f}")
    return 0


def run_check_assumption(cfg: RunConfig, start=(0.0, 0.04)) -> int:
    sol = _solve(cfg)
    coeffs = heston_coefficients(cfg.market)
    constants = market_constants(coeffs, cfg.domain, cfg.prefs)
    law = exit_law(cfg.market, cfg.domain.L)
    bounds = sup_bounds(sol)
    reports = [scan_q(cfg.prefs, constants, bounds, law, (q,), start) for q in cfg.q_ladder]
    overall = "Verified" if any(r.verdict == "Verified" for r in reports) else "NotVerified"
    payload = {"overall": overall, "sup_bounds": bounds,
               "constants": {"c_lam_sig": constants.c_lam_sig, "r_bar": constants.r_bar,
                             "r_under": constants.r_under, "c1": constants.c1},
               "reports": [r.as_dict() for r in reports]}
    write_json(os.path.join(cfg.out_dir, "assumption.json"), payload)
    print(f"moment condition: {overall}")
    return 0 if overall == "Verified" else 1


def run_verify(cfg: RunConfig, probes=None, dump_samples: bool = False) -> int:
    probes = list(probes or cfg.probes)
    law = exit_law(cfg.market, cfg.domain.L)
    w0, y0 = probes[0]
    times, sides = sample_exit_times(cfg.n_paths, w0, y0, cfg.market, cfg.domain, cfg.dt,
                                     cfg.seed, band=True, return_sides=True)
    if dump_samples:
        write_csv(os.path.join(cfg.out_dir, "exit_times.csv"), ("tau",), (times,))
    enough = cfg.n_paths >= MIN_KS_SAMPLES and cfg.fk_paths >= MIN_FK_PATHS
    if cfg.n_paths >= MIN_KS_SAMPLES:
        ks = empirical_vs_series(times, law, w0, y0)
    else:
        ks = float(stats.kstest(times, lambda t: exit_cdf(w0, y0, t, law)).statistic)
    sol = _solve(cfg)
    checks = [feynman_kac_check(sol, cfg.market, cfg.prefs, cfg.fk_paths, cfg.dt,
                                cfg.seed + 7919 * (i + 1), p) for i, p in enumerate(probes)]
    worst = max(checks, key=lambda c: c["fk_residual"] - c["allowance"])
    ok = ks <= 0.01 and all(c["passed"] and c["bias_shrinks"] for c in checks)
    verdict = ("Pass" if ok else "Fail") if enough else "Inconclusive"
    report = VerificationReport(n_paths=cfg.n_paths, dt=cfg.dt, fk_paths=cfg.fk_paths,
                                seed=cfg.seed, ks_distance=ks,
                                fk_residual=worst["fk_residual"], fk_stderr=worst["fk_stderr"],
                                exit_faces=face_frequencies(sides), probes=checks,
                                verdict=verdict)
    write_json(os.path.join(cfg.out_dir, "verification.json"), report.as_dict())
    print(f"KS = {ks:.4g}; Feynman-Kac {sum(c['passed'] for c in checks)}/{len(checks)} probes; "
          f"verdict {verdict}")
    return 1 if verdict == "Fail" else 0


def run_strategy_export(cfg: RunConfig, solution_path: Optional[str] = None) -> int:
    path = solution_path or os.path.join(cfg.out_dir, "solution.csv")
    sol = read_solution_csv(path, cfg) if os.path.exists(path) else _solve(cfg)
    out, field = _write_grid(cfg, sol, "strategy.csv")
    print(f"wrote {out}; pi* range [{field.pi_star.min():.4g}, {field.pi_star.max():.4g}], "
          f"fixed-horizon weight {field.baseline_pi:.4g}")
    return 0


def _probe(text: str):
    try:
        w, y = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"probe must be 'w,y' (got {text!r})") from exc
    return (w, y)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", help="output directory (overrides output.directory)")
    common.add_argument("--seed", type=int, help="master seed (overrides mc.seed)")
    common.add_argument("--probe", type=_probe, action="append", metavar="W,Y",
                        help="evaluation point; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="horizon-ez", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the elliptic problem")
    dens = sub.add_parser("density", parents=[common], help="exit-time survival and density")
    dens.add_argument("--t-max", type=float, default=None)
    dens.add_argument("--n-points", type=int, default=4001)
    sub.add_parser("check-assumption", parents=[common], help="exponential-moment check")
    ver = sub.add_parser("verify", parents=[common], help="Monte Carlo verification")
    ver.add_argument("--dump-samples", action="store_true")
    exp = sub.add_parser("strategy-export", parents=[common], help="write pi* and c~* fields")
    exp.add_argument("--solution", help="solution CSV to read (default OUT/solution.csv)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        os.makedirs(cfg.out_dir, exist_ok=True)
        probe = args.probe[0] if args.probe else (0.0, 0.04)
        if args.command == "solve":
            return run_solve(cfg)
        if args.command == "density":
            return run_density(cfg, probe[0], probe[1], args.t_max, args.n_points)
        if args.command == "check-assumption":
            return run_check_assumption(cfg, probe)
        if args.command == "verify":
            return run_verify(cfg, args.probe, args.dump_samples)
        return run_strategy_export(cfg, args.solution)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, SeriesConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
