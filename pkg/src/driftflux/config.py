"""Scenario files: INI sections parsed into typed, validated dataclasses.

Example::

    [scenario]
    name = conservation
    seed = 7

    [params]
    mu_tilde = 0.5
    ...

Sections ``grid``, ``solver``, ``initial``, ``monitor``, ``smallness`` and
``acceptance`` are optional and fall back to per-scenario defaults.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .diagnostics import ContinuationMonitor
from .errors import ConfigError, DriftFluxError
from .initial_data import Recipe
from .lp_besov import Grid
from .model import PhysParams, params_from_mapping, reference_params
from .solver import SolverConfig

SCENARIOS = ("identity-check", "linear-oracle", "small-data-global", "large-data-local",
             "theta-transport", "conservation", "besov-suite")

KNOWN_SECTIONS = ("scenario", "params", "grid", "solver", "initial", "monitor", "smallness",
                  "acceptance", "output")


@dataclass(frozen=True)
class Scenario:
    name: str
    params: PhysParams
    grid: Grid
    solver: SolverConfig
    recipe: Recipe
    seed: int = 0
    monitor: dict = field(default_factory=dict)
    smallness: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    snapshots: bool = False
    output_dir: Optional[str] = None
    source: Optional[str] = None

    def make_monitor(self):
        return ContinuationMonitor(**self.monitor)

    def echo(self):
        """JSON-friendly view of the parsed configuration."""
        def clean(obj):
            if isinstance(obj, float) and not math.isfinite(obj):
                return str(obj)
            if isinstance(obj, dict):
                return {str(k): clean(v) for k, v in obj.items()}
            if isinstance(obj, (tuple, list)):
                return [clean(v) for v in obj]
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: clean(getattr(obj, f.name)) for f in fields(obj)}
            return obj
        return clean({"name": self.name, "seed": self.seed, "params": self.params,
                      "grid": self.grid, "solver": self.solver, "recipe": self.recipe,
                      "monitor": self.monitor, "smallness": self.smallness,
                      "acceptance": self.acceptance, "snapshots": self.snapshots})


def _num(section, key, raw, kind=float):
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def _take(cp, section, keys):
    """Parse ``section`` with ``keys = {key: type}``; unknown keys are errors."""
    if not cp.has_section(section):
        return {}
    out = {}
    for key, raw in cp[section].items():
        if key not in keys:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        kind = keys[key]
        out[key] = kind(section, key, raw) if callable(kind) and not isinstance(kind, type) else _num(section, key, raw, kind)
    return out


def _dt(section, key, raw):
    return "auto" if raw.strip() == "auto" else _num(section, key, raw)


def _ell(section, key, raw):
    return None if raw.strip() in ("full", "none") else _num(section, key, raw)


def _str(section, key, raw):
    return raw.strip()


def _band(section, key, raw):
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ConfigError(f"[{section}] {key} must be two numbers 'lo, hi'")
    return tuple(_num(section, key, p) for p in parts)


def _ladder(section, key, raw):
    dts = tuple(_num(section, key, p) for p in raw.replace(",", " ").split())
    if len(dts) < 2 or any(not dt > 0 for dt in dts):
        raise ConfigError(f"[{section}] {key} needs at least two positive time steps")
    return dts


SOLVER_KEYS = {"dt": _dt, "t_end": float, "ell": _ell, "chart": _str, "cfl_advective": float,
               "cfl_viscous": float, "dealias": bool, "snapshot_stride": int, "keep_mean": bool,
               "outer_projection": bool, "freeze_velocity": bool, "theta": float, "beta": float,
               "enforce_admissibility": bool}
INITIAL_KEYS = {"kind": _str, "chart": _str, "band": _band, "target_E0": float,
                "target_m": float, "target_n": float, "target_u": float,
                "target_rho": float, "target_g": float, "amplitude": float, "snapshot": _str}
GRID_KEYS = {"dim": int, "n_modes": int, "box_length": float}
MONITOR_KEYS = {"int_grad_u_budget": float, "inf_one_plus_rho_floor": float,
                "sup_mtilde_budget": float}
SMALLNESS_KEYS = {"assumed_C": float, "assumed_A": float, "assumed_Cbar": float,
                  "eta": float, "T": float}
ACCEPTANCE_KEYS = {"tolerance": float, "count": int, "slope_min": float, "slope_max": float,
                   "max_error": float, "max_growth": float, "dt_ladder": _ladder,
                   "modes_max": float, "range_tolerance": float}
OUTPUT_KEYS = {"snapshots": bool}


def parse_scenario(text: str, source="<string>") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in cp.sections():
        if sec not in KNOWN_SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
    if not cp.has_section("scenario") or "name" not in cp["scenario"]:
        raise ConfigError(f"{source}: missing [scenario] name")
    head = _take(cp, "scenario", {"name": _str, "seed": int, "output_dir": _str})
    name = head["name"]
    if name not in SCENARIOS:
        raise ConfigError(f"[scenario] name = {name!r} is not one of {', '.join(SCENARIOS)}")
    seed = head.get("seed", 0)
    if seed < 0:
        raise ConfigError("[scenario] seed must be nonnegative")

    grid_kw = _take(cp, "grid", GRID_KEYS)
    try:
        if cp.has_section("params"):
            params = params_from_mapping(cp["params"])
        else:
            params = reference_params(grid_kw.get("dim", 2))
    except ConfigError:
        raise
    dim = grid_kw.setdefault("dim", params.dim)
    if dim != params.dim:
        raise ConfigError(f"[grid] dim = {dim} disagrees with [params] dim = {params.dim}")
    grid_kw.setdefault("n_modes", 64 if dim == 2 else 32)
    try:
        grid = Grid(**grid_kw)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None

    solver_kw = _take(cp, "solver", SOLVER_KEYS)
    solver_kw.setdefault("chart", _default_system(name))
    try:
        solver = SolverConfig(**solver_kw)
    except DriftFluxError as exc:
        raise ConfigError(f"[solver] {exc}") from None

    init = _take(cp, "initial", INITIAL_KEYS)
    recipe = _recipe(init, solver, name)

    return Scenario(
        name=name, params=params, grid=grid, solver=solver, recipe=recipe, seed=seed,
        monitor=_take(cp, "monitor", MONITOR_KEYS),
        smallness=_take(cp, "smallness", SMALLNESS_KEYS),
        acceptance=_take(cp, "acceptance", ACCEPTANCE_KEYS),
        snapshots=_take(cp, "output", OUTPUT_KEYS).get("snapshots", False),
        output_dir=head.get("output_dir"), source=str(source))


def _default_system(name):
    return {"large-data-local": "local_modified",
            "theta-transport": "theta_transport"}.get(name, "global_modified")


def _recipe(init, solver, name):
    chart = init.pop("chart", solver.state_chart)
    key_map = {"target_m": "first", "target_rho": "first", "target_n": "second",
               "target_g": "second", "target_u": "u"}
    # per-field targets use the default norm of their chart, resolved at build time
    targets = {key_map[k]: (init.pop(k), None) for k in list(init) if k in key_map}
    kind = init.pop("kind", "random")
    try:
        return Recipe(kind=kind, chart=chart, targets=targets, **init)
    except DriftFluxError as exc:
        raise ConfigError(f"[initial] {exc}") from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from None
    return parse_scenario(text, source=p)
