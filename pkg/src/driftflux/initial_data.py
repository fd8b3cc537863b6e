"""Reproducible initial data: band-limited random probes and constructed states."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import RecipeError
from .lp_besov import BesovSpec, Grid, SpectralField, hybrid_besov_norm, ops, read_snapshot, write_snapshot
from .model import DerivedConstants, State

RECIPES = ("equilibrium", "random", "compressive", "snapshot")


@dataclass(frozen=True)
class Recipe:
    """How to build an initial State.

    ``band`` is the shell lo ≤ |ξ| ≤ hi in physical wavenumbers.  Per-field
    targets override ``target_E0``, which is split evenly over the three
    terms of E₀ (global chart) or of the F-type data norm (local chart).
    """

    kind: str = "random"
    chart: str = "global_modified"
    band: tuple = (1.0, 4.0)
    target_E0: float = 0.01
    targets: dict = field(default_factory=dict)
    amplitude: float = 0.0
    snapshot: Optional[str] = None

    def __post_init__(self):
        if self.kind not in RECIPES:
            raise RecipeError(f"unknown recipe kind {self.kind!r}; expected one of {RECIPES}")
        if self.chart not in ("global_modified", "local_modified"):
            raise RecipeError("initial data chart must be global_modified or local_modified")
        lo, hi = self.band
        if not 0 < lo <= hi:
            raise RecipeError(f"band must satisfy 0 < lo <= hi, got {self.band}")
        if self.target_E0 < 0 or any(v[0] < 0 for v in self.targets.values()):
            raise RecipeError("target norms must be nonnegative")


def default_specs(chart: str, dim: int):
    """Norm that each unknown is scaled against, per chart."""
    h = dim / 2
    if chart == "global_modified":
        return {"first": BesovSpec(h - 1, h), "second": BesovSpec(h, h), "u": BesovSpec(h - 1, h - 1)}
    return {"first": BesovSpec(h, h), "second": BesovSpec(h, h), "u": BesovSpec(h - 1, h - 1)}


def check_band(grid: Grid, band):
    """Shell mask for ``band``; RecipeError if it is empty or not resolved."""
    lo, hi = band
    if hi > grid.dealias_cutoff * grid.fundamental + 1e-12:
        raise RecipeError(f"band upper limit {hi} exceeds the dealiased resolution "
                          f"{grid.dealias_cutoff * grid.fundamental:g}")
    kabs = ops(grid).kabs
    shell = (kabs >= lo) & (kabs <= hi)
    if not shell.any():
        raise RecipeError(f"band {band} contains no lattice frequency")
    return shell


def random_shell_field(grid: Grid, band, rng: np.random.Generator, vector=False) -> SpectralField:
    """Gaussian coefficients on a frequency shell, real-valued and mean-free."""
    shell = check_band(grid, band)
    ncomp = grid.dim if vector else 1
    shape = (ncomp,) + grid.spectral_shape
    coeffs = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * shell
    return SpectralField.from_coeffs(grid, coeffs)


def scale_to(f: SpectralField, spec: BesovSpec, target: float) -> SpectralField:
    if target == 0:
        return f * 0.0
    norm = hybrid_besov_norm(f, spec)
    if norm == 0:
        raise RecipeError("cannot rescale a zero field to a positive norm")
    return f * (target / norm)


def make_initial_data(recipe: Recipe, grid: Grid, seed: int, c: DerivedConstants) -> State:
    """Deterministic State for ``(recipe, seed)``; raises RecipeError if inadmissible."""
    if recipe.kind == "equilibrium":
        return State.equilibrium(grid, c, recipe.chart)
    if recipe.kind == "snapshot":
        st = load_state_snapshot(recipe.snapshot, recipe.chart)
        if st.grid != grid:
            raise RecipeError(f"snapshot grid {st.grid} differs from the scenario grid {grid}")
    elif recipe.kind == "compressive":
        st = compressive_state(grid, recipe.amplitude, recipe.chart)
    else:
        st = _random_state(recipe, grid, seed)
    check_admissible(st, c)
    return st


def _random_state(recipe: Recipe, grid: Grid, seed: int) -> State:
    specs = default_specs(recipe.chart, grid.dim)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    keys = ("first", "second", "u")
    fields_ = []
    for key, rng in zip(keys, rngs):
        f = random_shell_field(grid, recipe.band, rng, vector=(key == "u"))
        target, spec = recipe.targets.get(key, (recipe.target_E0 / 3, None))
        spec = spec or specs[key]
        fields_.append(scale_to(f, spec, target))
    return State(recipe.chart, *fields_)


def compressive_state(grid: Grid, amplitude: float, chart="local_modified") -> State:
    """Uniform masses with a converging velocity u = −A sin(x₁) e₁."""
    zero = SpectralField.zeros(grid)
    x = grid.coordinates()
    u = np.zeros((grid.dim,) + grid.shape)
    u[0] = -amplitude * np.sin(x[0] * grid.fundamental)
    return State(chart, zero, zero, SpectralField(grid, u))


def check_admissible(st: State, c: DerivedConstants):
    if st.chart == "global_modified":
        R = c.admissibility_radius
        worst = max(st.first.sup_norm(), st.second.sup_norm())
        if worst > R:
            raise RecipeError(f"sup(|m0|, |n0|) = {worst:.4g} exceeds the admissibility radius {R:.4g}")
    else:
        if float((1.0 + st.first.data).min()) <= 0:
            raise RecipeError("initial 1 + rho is not positive")
        if float((st.second.data + c.n_bar).min()) < 0:
            raise RecipeError("initial g + n_bar is negative")
    return st


def save_state_snapshot(directory, state: State):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, f in zip(("first", "second", "u"), (state.first, state.second, state.u)):
        write_snapshot(d / f"{name}.dfsf", f)
    return d


def load_state_snapshot(directory, chart) -> State:
    if directory is None:
        raise RecipeError("snapshot recipe needs a snapshot directory")
    d = Path(directory)
    paths = [d / f"{n}.dfsf" for n in ("first", "second", "u")]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise RecipeError(f"missing snapshot file(s): {', '.join(missing)}")
    try:
        return State(chart, *(read_snapshot(p) for p in paths))
    except ValueError as exc:
        raise RecipeError(str(exc)) from None
