"""INI run configuration.  Every default reproduces the reference experiment
(gamma=2, psi=1.5, delta=0.08, Heston market, band width 0.02)."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional

from .model import (HestonParams, Preferences, RectDomain, PAPER_MARKET,
                    PAPER_PREFERENCES)
from .passage import Q_LADDER
from .pde import MIN_NODES, SolverOptions


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending section.key."""


DEFAULT_PROBES = ((0.0, 0.04), (0.004, 0.04), (-0.004, 0.1), (0.002, 0.301), (0.0, 0.019))

DEFAULTS = {
    "preferences": dict(PAPER_PREFERENCES),
    "market": {"alpha": PAPER_MARKET["alpha"], "k2": PAPER_MARKET["k2"],
               "m2": PAPER_MARKET["m2"], "r": PAPER_MARKET["r"],
               "lambda": PAPER_MARKET["lam"], "eps": 0.0, "rho": 0.0},
    "domain": {"L": 0.02, "y1": 0.001, "y2": 1.0},
    "solver": {"nw": 199, "ny": 665, "tolerance": 1e-9, "max_iterations": 50,
               "damping": 1.0, "c_bar": 5.0, "scheme": "newton"},
    "mc": {"n_paths": 100000, "fk_paths": 20000, "dt": 1e-5, "seed": 20240601},
    "assumption": {"q_ladder": ",".join(str(q) for q in Q_LADDER)},
    "output": {"directory": "out", "formats": "csv,json"},
}

_INT_KEYS = {("solver", "nw"), ("solver", "ny"), ("solver", "max_iterations"),
             ("mc", "n_paths"), ("mc", "fk_paths"), ("mc", "seed")}
_STR_KEYS = {("solver", "scheme"), ("assumption", "q_ladder"), ("output", "directory"),
             ("output", "formats")}


@dataclass
class RunConfig:
    prefs: Preferences
    market: HestonParams
    domain: RectDomain
    nw: int
    ny: int
    solver: SolverOptions
    n_paths: int
    fk_paths: int
    dt: float
    seed: int
    q_ladder: tuple
    out_dir: str
    formats: tuple
    probes: tuple = field(default=DEFAULT_PROBES)


def _raw(path: Optional[str]) -> dict:
    values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    if path is None:
        return values
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "L" distinct from "l"
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for sec in parser.sections():
        if sec not in values:
            raise ConfigError(f"{sec}: unknown section")
        for key, text in parser.items(sec):
            if key not in values[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key")
            values[sec][key] = text
    return values


def _convert(values: dict) -> dict:
    out = {}
    for sec, keys in values.items():
        out[sec] = {}
        for key, v in keys.items():
            where = f"{sec}.{key}"
            try:
                if (sec, key) in _STR_KEYS:
                    out[sec][key] = str(v).strip()
                elif (sec, key) in _INT_KEYS:
                    out[sec][key] = int(str(v).strip())
                else:
                    out[sec][key] = float(v)
            except ValueError as exc:
                raise ConfigError(f"{where}: cannot parse {v!r}") from exc
    return out


def load_config(path: Optional[str] = None, seed: Optional[int] = None,
                out_dir: Optional[str] = None) -> RunConfig:
    v = _convert(_raw(path))
    p, m, d, s, mc = v["preferences"], v["market"], v["domain"], v["solver"], v["mc"]
    for key, floor in (("gamma", 1.0), ("psi", 1.0), ("delta", 0.0)):
        if not p[key] > floor:
            raise ConfigError(f"preferences.{key}: must exceed {floor:g} (got {p[key]})")
    prefs = Preferences(p["gamma"], p["psi"], p["delta"])
    for key in ("alpha", "k2", "m2"):
        if not m[key] > 0:
            raise ConfigError(f"market.{key}: must be positive (got {m[key]})")
    if not m["eps"] >= 0:
        raise ConfigError(f"market.eps: must be nonnegative (got {m['eps']})")
    if not -1 <= m["rho"] <= 1:
        raise ConfigError(f"market.rho: must lie in [-1, 1] (got {m['rho']})")
    market = HestonParams.from_k2(m["alpha"], m["k2"], m["m2"], m["r"], m["lambda"],
                                  m["eps"], m["rho"])
    if not d["L"] > 0:
        raise ConfigError(f"domain.L: must be positive (got {d['L']})")
    if not d["y1"] > 0:
        raise ConfigError(f"domain.y1: must be positive (got {d['y1']})")
    if not d["y1"] < d["y2"]:
        raise ConfigError(f"domain.y1: must be below domain.y2 (got y1={d['y1']}, y2={d['y2']})")
    domain = RectDomain(d["L"], d["y1"], d["y2"])
    for key in ("nw", "ny"):
        if s[key] < MIN_NODES:
            raise ConfigError(f"solver.{key}: must be at least {MIN_NODES} (got {s[key]})")
    for key in ("tolerance", "c_bar"):
        if not s[key] > 0:
            raise ConfigError(f"solver.{key}: must be positive (got {s[key]})")
    if not 0 < s["damping"] <= 1:
        raise ConfigError(f"solver.damping: must lie in (0, 1] (got {s['damping']})")
    if s["max_iterations"] < 1:
        raise ConfigError("solver.max_iterations: must be at least 1")
    scheme = s["scheme"].lower()
    if scheme not in ("newton", "picard"):
        raise ConfigError(f"solver.scheme: must be newton or picard (got {s['scheme']!r})")
    opts = SolverOptions(tolerance=s["tolerance"], max_iterations=s["max_iterations"],
                         damping=s["damping"], c_bar=s["c_bar"],
                         c_bar_max=max(40.0, s["c_bar"]), scheme=scheme)
    for key in ("n_paths", "fk_paths"):
        if mc[key] < 1:
            raise ConfigError(f"mc.{key}: must be at least 1 (got {mc[key]})")
    if not mc["dt"] > 0:
        raise ConfigError(f"mc.dt: must be positive (got {mc['dt']})")
    try:
        ladder = tuple(float(q) for q in v["assumption"]["q_ladder"].split(",") if q.strip())
    except ValueError as exc:
        raise ConfigError(f"assumption.q_ladder: {exc}") from exc
    if not ladder or any(not q > 1 for q in ladder):
        raise ConfigError("assumption.q_ladder: every q must exceed 1")
    formats = tuple(f.strip().lower() for f in v["output"]["formats"].split(",") if f.strip())
    bad = [f for f in formats if f not in ("csv", "json")]
    if bad:
        raise ConfigError(f"output.formats: unknown format {bad[0]!r}")
    return RunConfig(prefs=prefs, market=market, domain=domain, nw=s["nw"], ny=s["ny"],
                     solver=opts, n_paths=mc["n_paths"], fk_paths=mc["fk_paths"], dt=mc["dt"],
                     seed=mc["seed"] if seed is None else int(seed), q_ladder=ladder,
                     out_dir=out_dir or v["output"]["directory"], formats=formats)
