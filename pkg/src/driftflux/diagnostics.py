"""Norms, energies, estimate ratios and run-time monitors.

Histories are sequences of ``(t, State)`` pairs (or ``(t, SpectralField)``
for single-field estimates).  Time integrals use the trapezoid rule on the
sample grid; L̃^p norms come from :mod:`driftflux.lp_besov`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import ChartError, DriftFluxError, ParameterError, VacuumFault
from .lp_besov import (BesovSpec, Grid, SpectralField, as_spec, block_l2_norms, block_range,
                       hybrid_besov_norm, ops, spectral_derivative, time_lp)
from .model import (DerivedConstants, State, convert, from_modified, rhs_F,
                    rhs_G)

OK = "OK"


class InconsistentHistory(DriftFluxError, ValueError):
    pass


# ------------------------------------------------------------- energy


def _require_A(c: DerivedConstants):
    if not c.mu + c.lam > 0:
        raise ParameterError("mu + lambda > 0", "energy functional needs mu + lambda > 0")


def energy_alphas(m: SpectralField, u: SpectralField, c: DerivedConstants):
    """(ks, α_k) for every active block; see :func:`energy_alpha`."""
    _require_A(c)
    o = ops(m.grid)
    w2 = o.block_weights**2
    d = m.grid.dim
    mh, uh = m.coeffs[0], u.coeffs
    gm = 1j * o.k_odd * mh
    am = c.a * c.m_bar
    X = np.tensordot(w2, np.abs(mh) ** 2 * o.parseval, axes=d)
    Y = np.tensordot(w2, np.sum(np.abs(uh) ** 2, axis=0) * o.parseval, axes=d)
    Z = np.tensordot(w2, np.sum(np.abs(gm) ** 2, axis=0) * o.parseval, axes=d)
    cross = np.tensordot(w2, np.sum(np.real(np.conj(uh) * gm), axis=0) * o.parseval, axes=d)
    rad = (c.C0 / am) * X + Y + (c.nu * c.A / am) * Z + 2 * c.A * cross
    scale = X + Y + Z
    if np.any(rad < -1e-12 * np.maximum(scale, 1e-300)):
        raise ParameterError("energy window", "α_k² is negative: A lies outside the window")
    return o.block_ks.copy(), np.sqrt(np.maximum(rad, 0.0))


def energy_alpha(m: SpectralField, u: SpectralField, k: int, c: DerivedConstants) -> float:
    """Block energy α_k of a (m, u) pair."""
    ks, alphas = energy_alphas(m, u, c)
    hit = np.nonzero(ks == k)[0]
    return float(alphas[hit[0]]) if hit.size else 0.0


@dataclass(frozen=True)
class EnergyBracket:
    """c₁α_k² ≤ ‖Δ_k m‖² + ‖Δ_k u‖² + ‖∇Δ_k m‖² ≤ c₂α_k²."""

    c1: float
    c2: float
    M_lower: float
    M_upper: float
    window: tuple


def energy_bracket(c: DerivedConstants) -> EnergyBracket:
    _require_A(c)
    am, A, nu = c.a * c.m_bar, c.A, c.nu
    lo, hi = am / nu, 2 * am / (c.mu + c.lam)

    def lower(M):
        return min(c.C0 / am, 1 - A * M, A * (nu / am - 1 / M))

    def upper(M):
        return max(c.C0 / am, 1 + A * M, A * (nu / am + 1 / M))

    r = optimize.minimize_scalar(lambda M: -lower(M), bounds=(lo, hi), method="bounded",
                                 options={"xatol": 1e-12 * hi})
    M_lo = float(r.x)
    ell = lower(M_lo)
    # any M > 0 closes the upper bound; the optimum sits where two branches meet
    r2 = optimize.minimize_scalar(lambda lm: upper(math.exp(lm)),
                                  bounds=(math.log(lo) - 20, math.log(hi) + 20),
                                  method="bounded", options={"xatol": 1e-12})
    M_up = float(math.exp(r2.x))
    if not ell > 0:
        raise ParameterError("energy window", "empty M-window: no lower equivalence constant")
    return EnergyBracket(c1=1 / upper(M_up), c2=1 / ell, M_lower=M_lo, M_upper=M_up,
                         window=(lo, hi))


def block_energy_parts(m: SpectralField, u: SpectralField):
    """(ks, ‖Δ_k m‖², ‖Δ_k u‖², ‖∇Δ_k m‖²) for every active block."""
    ks, nm = block_l2_norms(m)
    _, nu_ = block_l2_norms(u)
    _, ng = block_l2_norms(spectral_derivative(m, "gradient"))
    return ks, nm**2, nu_**2, ng**2


# ------------------------------------------------------ history helpers


def _times_and_fields(history, idx):
    """Extract ``(times, [field, ...])`` for component ``idx`` of a history.

    ``idx`` is 0/1/2 (first scalar, second scalar, velocity) for State
    histories and ignored for field histories.
    """
    if len(history) == 0:
        raise ValueError("empty history")
    times = np.array([float(t) for t, _ in history])
    out = []
    for _, item in history:
        if isinstance(item, State):
            out.append((item.first, item.second, item.u)[idx])
        else:
            out.append(item)
    return times, out


def _blocks(fields_):
    ks = block_range(fields_[0].grid)
    return ks, np.stack([block_l2_norms(f)[1] for f in fields_])


def _check_uniform(times):
    if len(times) < 2:
        raise ValueError("a time history needs at least two samples")
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-14):
        raise ValueError("history samples must be strictly increasing and uniformly spaced")


def _cl(times, ks, norms, p, spec):
    spec = as_spec(spec)
    return float(np.sum(spec.weights(ks) * time_lp(norms, times, p)))


def _require_chart(history, chart):
    for _, st in history:
        if not isinstance(st, State):
            raise ChartError("expected a history of State samples")
        if st.chart != chart:
            raise ChartError(f"expected a {chart} history, got {st.chart}")


class _HistoryBlocks:
    """Block norms of the three unknowns of a State history, computed once."""

    def __init__(self, history):
        self.times = np.array([float(t) for t, _ in history])
        _check_uniform(self.times)
        self.ks = None
        self.norms = []
        for idx in range(3):
            _, fs = _times_and_fields(history, idx)
            self.ks, nb = _blocks(fs)
            self.norms.append(nb)

    def cl(self, idx, p, spec):
        return _cl(self.times, self.ks, self.norms[idx], p, spec)


def e_norm(history, s: float) -> float:
    """E_T^s norm of a global-chart history."""
    _require_chart(history, "global_modified")
    hb = _HistoryBlocks(history)
    inf = math.inf
    return (hb.cl(1, inf, (s - 1, s)) + hb.cl(0, inf, (s - 1, s)) + hb.cl(2, inf, (s - 1, s - 1))
            + hb.cl(0, 1, (s + 1, s)) + hb.cl(2, 1, (s + 1, s + 1)))


def f_norm(history, alpha: float) -> float:
    """F_T^α norm of a local-chart history."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    _require_chart(history, "local_modified")
    hb = _HistoryBlocks(history)
    h = history[0][1].grid.dim / 2
    inf = math.inf
    return (hb.cl(0, inf, (h, h + alpha)) + hb.cl(1, inf, (h, h + alpha))
            + hb.cl(2, inf, (h - 1, h - 1 + alpha)) + hb.cl(2, 1, (h + 1, h + 1 + alpha)))


def initial_energy(state: State) -> float:
    """E₀ = ‖m₀‖_{B^{d/2−1,d/2}} + ‖n₀‖_{B^{d/2}} + ‖u₀‖_{B^{d/2−1}}."""
    state.require("global_modified")
    h = state.grid.dim / 2
    return (hybrid_besov_norm(state.first, (h - 1, h)) + hybrid_besov_norm(state.second, (h, h))
            + hybrid_besov_norm(state.u, (h - 1, h - 1)))


def running_integral(times, values):
    """Cumulative trapezoid ∫₀ᵗ values, starting at 0."""
    return integrate.cumulative_trapezoid(np.asarray(values, float), np.asarray(times, float),
                                          initial=0.0)


# -------------------------------------------------------- estimate reports


@dataclass(frozen=True)
class EstimateReport:
    name: str
    lhs: float
    rhs_shape: str
    implied_constant: float
    details: dict = field(default_factory=dict)


def _velocity_integral(times, vfields):
    d = vfields[0].grid.dim
    vals = [hybrid_besov_norm(v, (d / 2 + 1, d / 2 + 1)) for v in vfields]
    return running_integral(times, vals)


def check_transport_estimate(n_history, u_history, spec) -> EstimateReport:
    """Implied C in ‖n‖_{L̃^∞(B^{s₁,s₂})} ≤ e^{C V(T)} ‖n₀‖_{B^{s₁,s₂}}."""
    spec = as_spec(spec)
    times, ns = _times_and_fields(n_history, 1)
    tu, us = _times_and_fields(u_history, 2)
    if len(times) != len(tu) or not np.allclose(times, tu):
        raise ValueError("n and u histories must share their sample times")
    d = ns[0].grid.dim
    for e in (spec.s, spec.t):
        if not -d / 2 < e <= d / 2 + 1:
            raise ValueError(f"exponent {e} outside (-d/2, d/2 + 1]")
    _check_uniform(times)
    ks, nb = _blocks(ns)
    lhs = _cl(times, ks, nb, math.inf, spec)
    n0 = float(np.sum(spec.weights(ks) * nb[0]))
    V = float(_velocity_integral(times, us)[-1])
    if n0 == 0:
        if lhs > 0:
            raise InconsistentHistory("transported field grew from zero initial data")
        C = 0.0
    else:
        ratio = lhs / n0
        if ratio <= 1.0:
            C = 0.0
        elif V > 0:
            C = math.log(ratio) / V
        else:
            C = math.inf
    return EstimateReport("transport", lhs, "exp(C V(T)) ||n0||", C,
                          {"n0": n0, "V": V, "ratio": lhs / n0 if n0 else 0.0})


def check_parabolic_estimate(history, c: DerivedConstants, s: Optional[float] = None) -> EstimateReport:
    """Implied prefactor K in the mixed parabolic-hyperbolic bound for (m, u).

    LHS = ‖m‖_{L̃^∞(B^{s−1,s})} + ‖u‖_{L̃^∞(B^{s−1})} + ‖m‖_{L¹(B^{s+1,s})} + ‖u‖_{L¹(B^{s+1})};
    shape = e^{V(T)}(‖m₀‖_{B^{s−1,s}} + ‖u₀‖_{B^{s−1}} + ‖F‖_{L¹(B^{s−1,s})} + ‖G‖_{L¹(B^{s−1})}).
    The exponential rate is fixed to 1 so that a single constant is fitted.
    """
    _require_chart(history, "global_modified")
    d = history[0][1].grid.dim
    s = d / 2 if s is None else s
    hb = _HistoryBlocks(history)
    inf = math.inf
    lhs = (hb.cl(0, inf, (s - 1, s)) + hb.cl(2, inf, (s - 1, s - 1))
           + hb.cl(0, 1, (s + 1, s)) + hb.cl(2, 1, (s + 1, s + 1)))
    st0 = history[0][1]
    m0 = hybrid_besov_norm(st0.first, (s - 1, s))
    u0 = hybrid_besov_norm(st0.u, (s - 1, s - 1))
    Fs = [rhs_F(st.first, st.second, st.u, c) for _, st in history]
    Gs = [rhs_G(st.first, st.second, st.u, c) for _, st in history]
    ksF, bF = _blocks(Fs)
    _, bG = _blocks(Gs)
    Fn = _cl(hb.times, ksF, bF, 1, (s - 1, s))
    Gn = _cl(hb.times, ksF, bG, 1, (s - 1, s - 1))
    V = float(_velocity_integral(hb.times, [st.u for _, st in history])[-1])
    shape = math.exp(V) * (m0 + u0 + Fn + Gn)
    K = lhs / shape if shape > 0 else (0.0 if lhs == 0 else math.inf)
    return EstimateReport("parabolic", lhs, "exp(V(T)) (||m0|| + ||u0|| + ||F||_L1 + ||G||_L1)", K,
                          {"m0": m0, "u0": u0, "F": Fn, "G": Gn, "V": V, "s": s})


def check_theta_transport_bound(h_history, v_history, theta: float, beta: float,
                                s: Optional[float] = None, C2: Optional[float] = None) -> EstimateReport:
    """Smallest C closing the θ-transport bound at every sample time.

    With ``s`` given, also reports the smallest C closing the companion
    bound for the B^s norm (``details['C_s']``).
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    times, hs = _times_and_fields(h_history, 0)
    tv, vs = _times_and_fields(v_history, 2)
    if len(times) != len(tv) or not np.allclose(times, tv):
        raise ValueError("h and v histories must share their sample times")
    _check_uniform(times)
    d = hs[0].grid.dim
    h = d / 2
    ks, hb = _blocks(hs)
    w = BesovSpec(h, h).weights(ks)
    # L̃^∞([0, t]) per prefix = running block-wise max, then weighted sum
    lhs_t = np.maximum.accumulate(hb, axis=0) @ w
    h0 = float(hb[0] @ w)
    W = _velocity_integral(times, vs)
    q = 1 + 2 * abs(theta)
    bp = beta / q
    C = 0.0
    for lt, Wt in zip(lhs_t[1:], W[1:]):
        ratio = (lt + bp) / (h0 + bp) if h0 + bp > 0 else (1.0 if lt == 0 else math.inf)
        if ratio <= 1:
            continue
        C = max(C, math.log(ratio) / (q * Wt) if Wt > 0 else math.inf)
    details = {"h0": h0, "W": float(W[-1]), "lhs_series": lhs_t.tolist()}
    if s is not None:
        details["C_s"] = _theta_companion_constant(times, hs, vs, theta, beta, s, h0, W)
    return EstimateReport("theta_transport", float(lhs_t[-1]),
                          "exp(C(1+2|theta|)W)(||h0|| + b') - b'", C, details)


def _theta_companion_constant(times, hs, vs, theta, beta, s, h0d2, W):
    ks, hb = _blocks(hs)
    w = BesovSpec(s, s).weights(ks)
    lhs_t = np.maximum.accumulate(hb, axis=0) @ w
    h0 = float(hb[0] @ w)
    Ws = running_integral(times, [hybrid_besov_norm(v, (s + 1, s + 1)) for v in vs])
    q, th = 1 + 2 * abs(theta), abs(theta)

    def rhs(C, i):
        inner = math.exp(C * q * W[i]) * (h0d2 + beta / q) + 2 * th * beta / q
        return math.exp(C * (1 + th) * W[i]) * (h0 + C * th * inner * Ws[i])

    def closes(C):
        return all(lhs_t[i] <= rhs(C, i) * (1 + 1e-12) for i in range(len(times)))

    if closes(0.0):
        return 0.0
    hi = 1.0
    while not closes(hi):
        hi *= 2
        if hi > 1e6:
            return math.inf
    return float(optimize.brentq(lambda C: 1.0 if closes(C) else -1.0, 0.0, hi, xtol=1e-10))


# ------------------------------------------------------ continuation monitor


@dataclass
class ContinuationMonitor:
    """Tracks ∫‖∇u‖_∞ dt, inf(1 + ρ) and sup m̃ against budgets."""

    int_grad_u_budget: float = math.inf
    inf_one_plus_rho_floor: float = 1e-2
    sup_mtilde_budget: float = math.inf
    status: str = OK
    violated_at: Optional[float] = None
    integral: float = 0.0
    fault_after_violation: Optional[bool] = None
    _last: Optional[tuple] = None

    def observe_pointwise(self, grad_u_inf, inf_one_plus_rho, sup_mtilde, t):
        if self._last is not None:
            t0, g0 = self._last
            self.integral += 0.5 * (t - t0) * (g0 + grad_u_inf)
        self._last = (t, grad_u_inf)
        if self.status != OK:
            return self.status
        name = None
        if self.integral > self.int_grad_u_budget:
            name = "int_grad_u_inf"
        elif inf_one_plus_rho < self.inf_one_plus_rho_floor:
            name = "inf(1+rho)"
        elif sup_mtilde > self.sup_mtilde_budget:
            name = "sup_mtilde"
        if name is not None:
            self.status = f"CRITERION_VIOLATED({name})"
            self.violated_at = t
        return self.status

    def observe(self, record: "DiagnosticsRecord"):
        return self.observe_pointwise(record.grad_u_inf, record.inf_one_plus_rho,
                                      record.sup_mtilde, record.t)

    def note_fault(self, exc):
        self.fault_after_violation = self.status != OK


def continuation_monitor(records: Sequence["DiagnosticsRecord"], **budgets):
    """Replay a record stream; returns the status after each record."""
    mon = ContinuationMonitor(**budgets)
    return [mon.observe(r) for r in records]


# ---------------------------------------------------------- smallness


def embedding_constant(grid: Grid) -> float:
    """M₀ with ‖f‖_∞ ≤ M₀‖f‖_{B^{d/2}} for mean-free fields on ``grid``.

    Per block, ‖Δ_k f‖_∞ ≤ √(N_k / L^d)‖Δ_k f‖₂ where N_k counts lattice
    points in the block's (full-plane) support.
    """
    o = ops(grid)
    d = grid.dim
    # full-lattice multiplicity of each rfft column
    mult = np.full(grid.spectral_shape, 2.0)
    mult[..., 0] = 1.0
    mult[..., -1] = 1.0
    best = 0.0
    for k, w in zip(o.block_ks, o.block_weights):
        Nk = float(np.sum(mult[w > 0]))
        best = max(best, math.sqrt(Nk / grid.volume) / 2.0 ** (k * d / 2))
    return best


@dataclass(frozen=True)
class SmallnessReport:
    kind: str
    measured: dict
    conditions: dict
    critical: dict
    passed: bool
    notes: dict = field(default_factory=dict)


def smallness_report(initial: State, c: DerivedConstants, assumed_C: float,
                     assumed_A: Optional[float] = None,
                     assumed_Cbar: float = 1.0, M0: Optional[float] = None,
                     eta: float = 1.0, T: float = 1.0, alpha: float = 1.0) -> SmallnessReport:
    """Evaluate the small-data conditions (global chart) or the short-time
    conditions (local chart) with user-supplied constants.  ``assumed_A`` is
    only used by the global conditions."""
    if initial.chart != "local_modified" and assumed_A is None:
        raise ParameterError("assumed_A is required for the global conditions")
    for name, v in (("assumed_C", assumed_C), ("assumed_A", 1.0 if assumed_A is None else assumed_A),
                    ("assumed_Cbar", assumed_Cbar), ("eta", eta), ("T", T)):
        if not v > 0:
            raise ParameterError(f"{name} > 0")
    if initial.chart == "local_modified":
        return _local_smallness(initial, c, assumed_C, eta, T, alpha)
    st = convert(initial, "global_modified", c)
    return _global_smallness(st, c, assumed_C, assumed_A, assumed_Cbar, M0)


def _global_smallness(st, c, C, A, Cb, M0):
    M0 = embedding_constant(st.grid) if M0 is None else M0
    E0 = initial_energy(st)
    base = A**2 / (A + 2)
    crit = {
        "bootstrap": (base - 1) / (C * A**2 * Cb**2),
        "exponential": math.log((A + 1) / A) / (Cb**2 * A),
        "vacuum_margin": c.a * c.m_bar / (2 * (1 + c.b) * A * Cb * M0),
    }
    conds = {
        "bootstrap": 1 + C * A**2 * Cb**2 * E0 <= base,
        "exponential": math.exp(Cb**2 * A * E0) <= (A + 1) / A,
        "vacuum_margin": 2 * (1 + c.b) * A * Cb * M0 * E0 <= c.a * c.m_bar,
    }
    try:
        mt = from_modified(st, c).first.data
        window = (float(mt.min()), float(mt.max()))
        inside = c.m_bar / 2 <= window[0] and window[1] <= 1.5 * c.m_bar
    except VacuumFault:
        window, inside = None, False
    notes = {"mtilde_range": window, "mtilde_window_ok": inside,
             "window_guaranteed": bool(conds["vacuum_margin"] and A * Cb >= 1),
             "M0": M0, "A_Cbar_ge_1": A * Cb >= 1, "A_gt_2": A > 2}
    return SmallnessReport("global", {"E0": E0}, conds, crit, all(conds.values()), notes)


def lame_heat_block_l1(u0: SpectralField, c: DerivedConstants, T: float, spec, n_t: int = 257):
    """‖u_ls‖_{L¹([0,T]; B^{s,t})} for the exact Lamé heat flow started at u0."""
    o = ops(u0.grid)
    kabs = o.kabs
    safe = np.where(kabs > 0, kabs, 1.0)
    e = np.where(kabs > 0, o.k / safe, 0.0)
    uh = u0.coeffs
    w_long = np.sum(e * uh, axis=0)
    pl = np.abs(w_long) ** 2 * o.parseval
    pt = np.sum(np.abs(uh) ** 2, axis=0) * o.parseval - pl
    ts = np.linspace(0.0, T, n_t)
    wk2 = o.block_weights**2
    d = u0.grid.dim
    norms = np.empty((n_t, len(o.block_ks)))
    for i, t in enumerate(ts):
        pw = pl * np.exp(-2 * c.nu * o.k2 * t) + np.maximum(pt, 0) * np.exp(-2 * c.mu * o.k2 * t)
        norms[i] = np.sqrt(np.tensordot(wk2, pw, axes=d))
    per_block = integrate.simpson(norms, x=ts, axis=0)
    return float(np.sum(as_spec(spec).weights(o.block_ks) * per_block))


def _local_smallness(st, c, C, eta, T, alpha):
    h = st.grid.dim / 2
    M0 = hybrid_besov_norm(st.first, (h, h + alpha))
    N0 = hybrid_besov_norm(st.second, (h, h + alpha))
    U0 = hybrid_besov_norm(st.u, (h - 1, h - 1 + alpha))
    b_star = float((1.0 + st.first.data).min())
    if not b_star > 0:
        raise ParameterError("inf(1 + rho0) > 0")
    bn = b_star * c.nu_lower
    MT = 4 * M0 + 5.0 / 3.0

    def lhs(Tv):
        Uls = lame_heat_block_l1(st.u, c, Tv, (h + 1, h + 1 + alpha))
        one = bn ** (1 - 2 / alpha) * c.nu_upper ** (2 / alpha) * MT ** (2 / alpha) * Tv
        two = (M0 + N0 + 1) ** 4 * (Tv + c.nu_upper * Uls) + U0 * Uls
        return one, two, Uls

    one, two, Uls = lhs(T)
    conds = {"time_scale": one <= eta, "data_size": two <= eta * bn}

    def slack(Tv):
        a1, a2, _ = lhs(Tv)
        return min(eta - a1, eta * bn - a2)

    if slack(1e-12) < 0:
        Tcrit = 0.0
    else:
        hi = T
        while slack(hi) >= 0 and hi < 1e6:
            hi *= 2
        Tcrit = float(optimize.brentq(slack, 1e-12, hi, xtol=1e-12)) if slack(hi) < 0 else math.inf
    lower = b_star / (2 * (1 + b_star))
    upper = 2 * (float((1.0 + st.first.data).max()) + 1)
    return SmallnessReport(
        "local", {"M0": M0, "N0": N0, "U0": U0, "U_ls": Uls, "b_star": b_star, "M_T_bound": MT},
        conds, {"T": Tcrit}, all(conds.values()),
        {"one_plus_rho_window": (lower, upper), "C": C})


# ----------------------------------------------------------- records


@dataclass(frozen=True)
class DiagnosticsConfig:
    specs: dict
    energy: bool = True

    @classmethod
    def for_grid(cls, grid: Grid, energy=True):
        h = grid.dim / 2
        scal = (BesovSpec(h - 1, h), BesovSpec(h, h), BesovSpec(h + 1, h))
        vec = (BesovSpec(h - 1, h - 1), BesovSpec(h + 1, h + 1))
        return cls(specs={"first": scal, "second": scal, "u": vec}, energy=energy)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    chart: str
    norms: dict
    alpha: dict
    mass_liquid: float
    mass_gas: float
    momentum: tuple
    sup_mtilde: float
    inf_mtilde: float
    inf_one_plus_rho: float
    grad_u_inf: float
    u_besov: float
    V_t: float
    int_grad_u_inf: float
    status: str = OK
    regular: bool = True
    blocks: dict = field(default_factory=dict, compare=False, repr=False)

    def row(self):
        out = {"t": self.t}
        out.update(self.norms)
        out.update({f"alpha_k_{k}": v for k, v in self.alpha.items()})
        out["mass_liquid"] = self.mass_liquid
        out["mass_gas"] = self.mass_gas
        for i, v in enumerate(self.momentum):
            out[f"momentum_{i}"] = v
        out.update(sup_mtilde=self.sup_mtilde, inf_mtilde=self.inf_mtilde,
                   inf_one_plus_rho=self.inf_one_plus_rho, grad_u_inf=self.grad_u_inf,
                   u_besov=self.u_besov, V_t=self.V_t, int_grad_u_inf=self.int_grad_u_inf,
                   regular=1.0 if self.regular else 0.0,
                   criterion_violated=0.0 if self.status == OK else 1.0)
        return out


_FIELD_NAMES = {"global_modified": ("m", "n"), "local_modified": ("rho", "g"),
                "theta_transport": ("h", "unused"), "physical": ("mtilde", "ntilde")}


def grad_sup(u: np.ndarray, grid: Grid):
    """max_x |∇u|_F from physical velocity samples."""
    o = ops(grid)
    uh = o.forward(u)
    du = o.inverse(1j * o.k_odd[None] * uh[:, None])
    return float(np.sqrt(np.sum(du**2, axis=(0, 1))).max())


class RecordBuilder:
    """Builds DiagnosticsRecords along a run, accumulating running integrals."""

    def __init__(self, grid: Grid, c: DerivedConstants, system: str, config: DiagnosticsConfig):
        self.grid, self.c, self.system, self.config = grid, c, system, config
        self._prev = None
        self.V = 0.0
        self.G = 0.0
        self._stride_dt = None
        self._t_last_regular = None

    def _physical(self, Y):
        c = self.c
        if self.system == "global_modified":
            mt = c.m_bar + (Y[0] - c.b * Y[1]) / c.a
            return mt, mt * (Y[1] / c.a0 + c.n_bar / c.m_bar)
        if self.system == "local_modified":
            return c.m_bar / (1.0 + Y[0]), Y[1] + c.n_bar
        return None, None

    def monitor_quantities(self, Y):
        mt, _ = self._physical(Y)
        gu = grad_sup(Y[2:], self.grid)
        return gu, float((self.c.m_bar / mt).min()), float(mt.max())

    def record(self, state: State, t: float, monitor=None) -> DiagnosticsRecord:
        g, c = self.grid, self.c
        d = g.dim
        names = _FIELD_NAMES[self.system]
        norms, blocks = {}, {}
        for key, fld, label in (("first", state.first, names[0]),
                                ("second", state.second, names[1]), ("u", state.u, "u")):
            if self.system == "theta_transport" and key == "second":
                continue
            ks, nb = block_l2_norms(fld)
            blocks[key] = nb
            for spec in self.config.specs[key]:
                norms[f"norm_{label}_{spec.s:g}_{spec.t:g}"] = float(np.sum(spec.weights(ks) * nb))
        alpha = {}
        if self.config.energy and self.system == "global_modified" and c.mu + c.lam > 0:
            ks, al = energy_alphas(state.first, state.u, c)
            alpha = {int(k): float(v) for k, v in zip(ks, al)}
        u = state.u.values
        gu = grad_sup(u, g)
        ub = hybrid_besov_norm(state.u, (d / 2 + 1, d / 2 + 1))
        if self._prev is not None:
            t0, gu0, ub0 = self._prev
            self.V += 0.5 * (t - t0) * (ub0 + ub)
            self.G += 0.5 * (t - t0) * (gu0 + gu)
        self._prev = (t, gu, ub)
        mt, nt = self._physical(state.pack())
        cell = g.dx**d
        if mt is not None:
            mass_l = float(mt.sum() * cell)
            mass_g = float(nt.sum() * cell)
            mom = tuple(float((mt * u[i]).sum() * cell) for i in range(d))
            sup_mt, inf_mt = float(mt.max()), float(mt.min())
            inf_1p = float((c.m_bar / mt).min())
        else:
            mass_l = mass_g = 0.0
            mom = (0.0,) * d
            sup_mt = inf_mt = inf_1p = 0.0
        status = monitor.status if monitor is not None else OK
        return DiagnosticsRecord(
            t=float(t), chart=self.system, norms=norms, alpha=alpha, mass_liquid=mass_l,
            mass_gas=mass_g, momentum=mom, sup_mtilde=sup_mt, inf_mtilde=inf_mt,
            inf_one_plus_rho=inf_1p, grad_u_inf=gu, u_besov=ub, V_t=self.V,
            int_grad_u_inf=self.G, status=status, blocks=blocks)


def record_for_state(state: State, c: DerivedConstants, t=0.0, system=None):
    system = system or state.chart
    b = RecordBuilder(state.grid, c, system, DiagnosticsConfig.for_grid(state.grid))
    return b.record(state, t)


# ------------------------------------------------------------- CSV I/O


def write_csv(records: Sequence[DiagnosticsRecord], path):
    rows = [r.row() for r in records]
    if not rows:
        raise ValueError("no records to write")
    header = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(row[k]), ".17g") for k in header])
    return path


def read_csv(path):
    """Parse a diagnostics CSV into a list of ``{column: float}`` rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in reader]


def check_rows(rows):
    """Validate parsed CSV rows: finite nonnegative norms, monotone integrals."""
    problems = []
    for i, row in enumerate(rows):
        for k, v in row.items():
            if not math.isfinite(v):
                problems.append(f"row {i}: {k} is not finite")
            elif (k.startswith("norm_") or k.startswith("alpha_")) and v < 0:
                problems.append(f"row {i}: {k} is negative")
    for key in ("V_t", "int_grad_u_inf"):
        vals = [r[key] for r in rows if key in r]
        if any(b < a for a, b in zip(vals, vals[1:])):
            problems.append(f"{key} decreases")
    return problems


def regular_history(result):
    """``(t, State)`` pairs of a SimulationResult on its uniform record grid."""
    return [(t, st) for (t, st), r in zip(result.states, result.records) if r.regular]
