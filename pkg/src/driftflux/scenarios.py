"""Verification experiments behind the CLI scenarios.

Every ``*_study`` function takes plain arguments and returns an
:class:`Outcome`; :func:`run_scenario` maps a parsed scenario file onto them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import diagnostics as diag
from .errors import SolverFault
from .initial_data import Recipe, check_band, make_initial_data, random_shell_field
from .lp_besov import (BesovSpec, Grid, SpectralField, block_l2_norms, chemin_lerner_norm,
                       hybrid_besov_norm, lp_block, lp_time_besov_norm, ops, psi_cutoff, refined_extrema)
from .model import (DerivedConstants, PhysParams, State, derive_constants, from_modified,
                    h_oracle, local_Q, nonlinear_H, q_oracle)
from .solver import SolverConfig, SpectralRHS, rk4_arrays, run_simulation, solve_linear_state


@dataclass
class Outcome:
    metrics: dict
    passed: bool
    tables: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    fault: Optional[SolverFault] = None
    monitor_status: Optional[str] = None
    states: list = field(default_factory=list)


def _sup_scaled(f: SpectralField, amp: float) -> SpectralField:
    return f * (amp / f.sup_norm())


def _rngs(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ------------------------------------------------------------ identities


def identity_study(c: DerivedConstants, grid: Grid, seed=0, count=20, tol=1e-8,
                   band=(1.0, 4.0)) -> Outcome:
    """Relative L² residuals of the H and Q expansions against their definitions."""
    amp = 0.1 * min(c.admissibility_radius, 1.0)
    g_amp = min(0.1, 0.5 * c.n_bar) if c.n_bar > 0 else 0.0
    rows = []
    for i, rng in enumerate(_rngs(seed, count)):
        m = _sup_scaled(random_shell_field(grid, band, rng), amp)
        n = _sup_scaled(random_shell_field(grid, band, rng), amp)
        H = nonlinear_H(m, n, c, dealiased=False)
        O = h_oracle(m, n, c)
        rH = (H - O).l2_norm() / O.l2_norm()
        rho = _sup_scaled(random_shell_field(grid, band, rng), 0.1)
        g = random_shell_field(grid, band, rng)
        g = _sup_scaled(g, g_amp) if g_amp > 0 else g * 0.0
        Q = local_Q(rho, g, c, dealiased=False)
        QO = q_oracle(rho, g, c)
        rQ = (Q - QO).l2_norm() / QO.l2_norm()
        rows.append((i, rH, rQ))
    worst_H = max(r[1] for r in rows)
    worst_Q = max(r[2] for r in rows)
    return Outcome({"max_residual_H": worst_H, "max_residual_Q": worst_Q, "tolerance": tol,
                    "count": count},
                   passed=worst_H <= tol and worst_Q <= tol,
                   tables={"identity": (("sample", "residual_H", "residual_Q"), rows)})


# -------------------------------------------------------- linear oracle


def linear_oracle_study(c: DerivedConstants, grid: Grid, seed=0, t_end=1.0,
                        dts=(0.02, 0.01, 0.005, 0.0025), modes_max=4.0, E0=0.01,
                        slope_range=(3.8, 4.2), max_error=1e-9) -> Outcome:
    """RK4 on the linear system against the exact per-mode solution."""
    st = make_initial_data(Recipe(band=(1.0, modes_max), target_E0=E0), grid, seed, c)
    cfg = SolverConfig(ell=modes_max, t_end=t_end).linear_only()
    rhs = SpectralRHS(grid, cfg, c)
    exact = solve_linear_state(st, t_end, c).pack()
    o = ops(grid)
    bound = rhs.stable_dt(st.pack())
    rows = []
    for dt in dts:
        nsteps = round(t_end / dt)
        Y = rhs.project(st.pack())
        for i in range(nsteps):
            Y = rk4_arrays(Y, rhs, dt, i * dt)
        err = float(np.abs(o.forward(Y - exact)).max()) / grid.n_modes**grid.dim
        rows.append((dt, err))
    dt_arr = np.array([r[0] for r in rows])
    err_arr = np.array([r[1] for r in rows])
    slope = float(np.polyfit(np.log(dt_arr), np.log(err_arr), 1)[0])
    ok = slope_range[0] <= slope <= slope_range[1] and err_arr[-1] <= max_error
    return Outcome({"slope": slope, "finest_error": float(err_arr[-1]), "stability_bound": bound,
                    "max_dt_within_bound": bool(max(dts) <= bound)},
                   passed=ok, tables={"ladder": (("dt", "max_mode_error"), rows)})


# ------------------------------------------------------- conservation


def conservation_metrics(records, initial_phys: State):
    r0 = records[0]
    g = initial_phys.grid
    mt = initial_phys.first.data
    speed = np.sqrt(np.sum(initial_phys.u.values**2, axis=0))
    mom_scale = float((mt * speed).sum() * g.dx**g.dim)

    def drift(key):
        v0 = getattr(r0, key)
        return max(abs(getattr(r, key) - v0) for r in records) / abs(v0)

    mom = max(float(np.max(np.abs(np.array(r.momentum) - np.array(r0.momentum)))) for r in records)
    return {"drift_mass_liquid": drift("mass_liquid"), "drift_mass_gas": drift("mass_gas"),
            "drift_momentum": mom / mom_scale if mom_scale > 0 else mom,
            "momentum_scale": mom_scale}


def conservation_study(c: DerivedConstants, grid: Grid, seed=0, E0=0.01, config=None,
                       tol=1e-8, range_tol=1e-6, band=(1.0, 4.0)) -> Outcome:
    """Mass/momentum conservation and transport range checks on one initial datum."""
    st = make_initial_data(Recipe(band=band, target_E0=E0), grid, seed, c)
    cfg = config or SolverConfig(cfl_advective=0.25, cfl_viscous=0.2)
    res = run_simulation(st, cfg, c, keep_states=True)
    metrics = conservation_metrics(res.records, from_modified(st, c))
    lo0, hi0 = refined_extrema(res.states[0][1].second)
    over, under = 0.0, 0.0
    for _, s in res.states:
        lo, hi = refined_extrema(s.second)
        over = max(over, hi - hi0)
        under = max(under, lo0 - lo)
    metrics.update(n_overshoot=over, n_undershoot=under, dt=res.dt, steps=res.steps)
    # same datum with the velocity frozen at zero: n must not move at all
    still = State(st.chart, st.first, st.second, st.u * 0.0)
    frozen = run_simulation(still, replace(cfg, freeze_velocity=True), c, keep_states=True)
    specs = [BesovSpec(s, t) for s in (-0.5, 0.0, 1.0) for t in (0.5, 1.0, 2.0)]
    dev = 0.0
    for spec in specs:
        ref = hybrid_besov_norm(frozen.states[0][1].second, spec)
        for _, s in frozen.states:
            dev = max(dev, abs(hybrid_besov_norm(s.second, spec) - ref) / ref)
    metrics["frozen_norm_deviation"] = dev
    ok = (max(metrics["drift_mass_liquid"], metrics["drift_mass_gas"],
              metrics["drift_momentum"]) <= tol and dev <= 1e-12
          and over <= range_tol and under <= range_tol)
    return Outcome(metrics, passed=ok, records=res.records,
                   states=[("initial", st), ("final", res.final)])


# ------------------------------------------------------ small data probe


def small_data_run(c: DerivedConstants, grid: Grid, E0: float, seed=0, t_end=1.0, nsteps=None,
                   stride=10):
    st = make_initial_data(Recipe(target_E0=E0), grid, seed, c)
    if nsteps is None:
        bound = SpectralRHS(grid, SolverConfig(), c).stable_dt(st.pack())
        nsteps = stride * math.ceil(t_end / bound / stride)
    cfg = SolverConfig(t_end=t_end, dt=t_end / nsteps, snapshot_stride=stride)
    return st, run_simulation(st, cfg, c, keep_states=True)


def _implied(history, c, grid):
    h = grid.dim / 2
    n_hist = [(t, s.second) for t, s in history]
    u_hist = [(t, s.u) for t, s in history]
    tr = diag.check_transport_estimate(n_hist, u_hist, (h - 1, h))
    pa = diag.check_parabolic_estimate(history, c)
    return tr, pa


def small_data_study(c: DerivedConstants, grid: Grid, E0: float, seed=0, t_end=1.0,
                     max_growth=10.0, stability_tol=0.1, smallness=None) -> Outcome:
    """E-norm growth and dt-halving stability of the implied estimate constants."""
    stride = 10
    st, res = small_data_run(c, grid, E0, seed, t_end, stride=stride)
    nsteps = res.steps
    _, res2 = small_data_run(c, grid, E0, seed, t_end, nsteps=2 * nsteps, stride=2 * stride)
    hist = diag.regular_history(res)
    hist2 = diag.regular_history(res2)
    E = diag.e_norm(hist, grid.dim / 2)
    E0m = diag.initial_energy(st)
    tr, pa = _implied(hist, c, grid)
    tr2, pa2 = _implied(hist2, c, grid)

    def rel(a, b):
        if a == b:
            return 0.0
        return abs(a - b) / max(abs(a), abs(b))

    metrics = {"E0": E0m, "E_norm": E, "growth": E / E0m,
               "C_transport": tr.implied_constant, "C_transport_half_dt": tr2.implied_constant,
               "K_parabolic": pa.implied_constant, "K_parabolic_half_dt": pa2.implied_constant,
               "rel_change_transport": rel(tr.implied_constant, tr2.implied_constant),
               "rel_change_parabolic": rel(pa.implied_constant, pa2.implied_constant),
               "dt": res.dt, "steps": nsteps}
    if smallness:
        rep = diag.smallness_report(st, c, **smallness)
        metrics["smallness_passed"] = rep.passed
        metrics.update({f"critical_E0_{k}": v for k, v in rep.critical.items()})
    ok = (E <= max_growth * E0m and metrics["rel_change_transport"] < stability_tol
          and metrics["rel_change_parabolic"] < stability_tol)
    return Outcome(metrics, passed=ok, records=res.records,
                   states=[("initial", st), ("final", res.final)])


# ---------------------------------------------------------- local runs


def near_vacuum_params() -> PhysParams:
    """Weak pressure, small viscosity, no gas: compression drives 1 + ρ to zero."""
    a_l = 0.1
    return PhysParams(mu_tilde=1e-3, lambda_tilde=0.0, a_l=a_l, a_g=0.07,
                      P_l0=0.95 * a_l**2, rho_l0=1.0, m_bar=1.0, n_bar=0.0)


def local_study(c: DerivedConstants, initial: State, cfg: SolverConfig, monitor=None,
                smallness=None) -> Outcome:
    monitor = monitor or diag.ContinuationMonitor()
    res = run_simulation(initial, cfg, c, monitor=monitor, keep_states=True, raise_on_fault=False)
    metrics = {"steps": res.steps, "dt": res.dt, "monitor_status": monitor.status,
               "monitor_violated_at": monitor.violated_at,
               "min_one_plus_rho": min(r.inf_one_plus_rho for r in res.records),
               "all_finite": bool(np.all(np.isfinite(res.final.pack())))}
    if res.fault is None:
        metrics["F_norm"] = diag.f_norm(diag.regular_history(res), 1.0)
    if smallness:
        rep = diag.smallness_report(initial, c, **smallness)
        metrics["smallness_passed"] = rep.passed
        metrics["critical_T"] = rep.critical["T"]
    return Outcome(metrics, passed=res.fault is None, records=res.records, fault=res.fault,
                   monitor_status=monitor.status,
                   states=[("initial", initial), ("final", res.final)])


def theta_study(grid: Grid, seed=0, theta=1.0, beta=1.0, t_end=1.0, amp_h=0.05, amp_v=0.2,
                band=(1.0, 4.0), stride=10) -> Outcome:
    rng_h, rng_v = _rngs(seed, 2)
    h0 = _sup_scaled(random_shell_field(grid, band, rng_h), amp_h)
    v = _sup_scaled(random_shell_field(grid, band, rng_v, vector=True), amp_v)
    st = State("local_modified", h0, h0 * 0.0, v)
    cfg = SolverConfig(chart="theta_transport", theta=theta, beta=beta, t_end=t_end,
                       snapshot_stride=stride, freeze_velocity=True)
    res = run_simulation(st, cfg, None, keep_states=True)
    hist = diag.regular_history(res)
    rep = diag.check_theta_transport_bound(hist, hist, theta, beta, s=grid.dim / 2 - 1)
    return Outcome({"C_implied": rep.implied_constant, "C_s_implied": rep.details["C_s"],
                    "W": rep.details["W"], "lhs": rep.lhs, "h0": rep.details["h0"]},
                   passed=math.isfinite(rep.implied_constant), records=res.records,
                   states=[("initial", st), ("final", res.final)])


# ------------------------------------------------------- Besov suite


def besov_study(grid: Grid, seed=0, count=20, tol=1e-12, interp_tol=1e-6) -> Outcome:
    o = ops(grid)
    nz = o.kabs > 0
    pou = float(np.abs(o.block_weights.sum(axis=0)[nz] - 1.0).max())

    x = grid.coordinates()
    cosf = SpectralField(grid, np.cos(x[0] * grid.fundamental))
    leak = max(lp_block(cosf, k).l2_norm() for k in o.block_ks if k not in (-1, 0))
    formula_err = 0.0
    if grid.fundamental == 1.0:
        for s, t in ((0.0, 1.0), (-0.5, 2.0), (1.0, 1.0)):
            ref = (psi_cutoff(1.0) * 2.0**-s + (1 - psi_cutoff(1.0))) * cosf.l2_norm()
            formula_err = max(formula_err, abs(hybrid_besov_norm(cosf, (s, t)) - ref) / ref)

    rngs = _rngs(seed, count + 2)
    emb_violations = 0
    for rng in rngs[:count]:
        f = random_shell_field(grid, (grid.fundamental, grid.dealias_cutoff * grid.fundamental), rng)
        ks, nb = block_l2_norms(f)
        s1, t1 = rng.uniform(-1, 1), rng.uniform(0, 2)
        s2, t2 = s1 + rng.uniform(0, 1), t1 - rng.uniform(0, 1)
        lhs = BesovSpec(s2, t2).weights(ks) * nb
        rhs = BesovSpec(s1, t1).weights(ks) * nb
        emb_violations += int(np.sum(lhs > rhs))

    f1 = random_shell_field(grid, (1.0, 6.0), rngs[-2])
    f2 = random_shell_field(grid, (1.0, 6.0), rngs[-1])
    times = np.linspace(0.0, 1.0, 65)
    hist = [(t, f1 * math.cos(2 * t) + f2 * math.sin(3 * t)) for t in times]
    theta = 0.5
    s1, t1, s2, t2 = 0.0, 1.0, 1.0, 2.0
    spec = (theta * s1 + (1 - theta) * s2, theta * t1 + (1 - theta) * t2)
    lhs = chemin_lerner_norm(hist, 2, spec)
    rhs = chemin_lerner_norm(hist, 1, (s1, t1)) ** theta * chemin_lerner_norm(hist, math.inf, (s2, t2)) ** (1 - theta)
    minkowski = lp_time_besov_norm(hist, 2, spec) <= lhs * (1 + 1e-14)
    metrics = {"partition_of_unity_error": pou, "block_leak": leak, "psi1_formula_error": formula_err,
               "embedding_violations": emb_violations, "interpolation_ratio": lhs / rhs,
               "minkowski_holds": bool(minkowski)}
    ok = (pou <= tol and leak <= tol and formula_err <= tol and emb_violations == 0
          and lhs <= rhs * (1 + interp_tol) and minkowski)
    return Outcome(metrics, passed=ok)


# ------------------------------------------------------ scenario dispatch


def prepare(sc):
    """Everything that can reject a scenario before any output is written.

    Returns ``(constants, initial_state_or_None)``; raises ParameterError or
    RecipeError on precondition failures.
    """
    c = derive_constants(sc.params)
    initial = None
    if sc.name in ("conservation", "small-data-global", "linear-oracle"):
        sc.params.check_global()
    if sc.name == "large-data-local":
        initial = make_initial_data(sc.recipe, sc.grid, sc.seed, c)
    elif sc.recipe.kind == "random" and sc.name != "besov-suite":
        check_band(sc.grid, sc.recipe.band)
    return c, initial


def run_scenario(sc, c=None, initial=None) -> Outcome:
    if c is None:
        c, initial = prepare(sc)
    acc, grid, cfg = sc.acceptance, sc.grid, sc.solver
    if sc.name == "identity-check":
        return identity_study(c, grid, sc.seed, acc.get("count", 20), acc.get("tolerance", 1e-8),
                              sc.recipe.band)
    if sc.name == "linear-oracle":
        dts = acc.get("dt_ladder", (0.02, 0.01, 0.005, 0.0025))
        return linear_oracle_study(c, grid, sc.seed, cfg.t_end, dts, acc.get("modes_max", 4.0),
                                   sc.recipe.target_E0,
                                   (acc.get("slope_min", 3.8), acc.get("slope_max", 4.2)),
                                   acc.get("max_error", 1e-9))
    if sc.name == "conservation":
        return conservation_study(c, grid, sc.seed, sc.recipe.target_E0, cfg,
                                  acc.get("tolerance", 1e-8), acc.get("range_tolerance", 1e-6),
                                  sc.recipe.band)
    if sc.name == "small-data-global":
        return small_data_study(c, grid, sc.recipe.target_E0, sc.seed, cfg.t_end,
                                acc.get("max_growth", 10.0), acc.get("tolerance", 0.1),
                                sc.smallness or None)
    if sc.name == "large-data-local":
        return local_study(c, initial, cfg, sc.make_monitor(), sc.smallness or None)
    if sc.name == "theta-transport":
        return theta_study(grid, sc.seed, cfg.theta, cfg.beta, cfg.t_end, band=sc.recipe.band,
                           stride=cfg.snapshot_stride)
    return besov_study(grid, sc.seed, acc.get("count", 20), acc.get("tolerance", 1e-12))
