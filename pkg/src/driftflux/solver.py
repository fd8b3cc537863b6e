"""Time integration of the projected drift-flux systems and the linear oracle.

The integrator works on packed physical samples ``Y`` of shape
``(2 + d, *grid.shape)`` holding (first scalar, second scalar, velocity) of a
:class:`~driftflux.model.State`.  Nonlinear terms are formed pointwise, then
2/3-dealiased and Friedrichs-projected in one spectral mask, which is also
applied to the linear terms: the semi-discrete ODE lives on the mask's range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import diagnostics as diag
from .errors import AdmissibilityFault, BlowUpFault, ConfigError, SolverFault, StabilityFault
from .lp_besov import Grid, SpectralField, friedrichs_mask, ops
from .model import DerivedConstants, State, check_vacuum, h_kernel, modified_mtilde, q_kernel

# radii of the RK4 stability region along the imaginary and negative real axes
RK4_IMAG_LIMIT = 2.8
RK4_REAL_LIMIT = 2.78

SYSTEMS = ("global_modified", "local_modified", "theta_transport")


@dataclass(frozen=True)
class SolverConfig:
    dt: object = "auto"
    t_end: float = 1.0
    ell: Optional[float] = None
    chart: str = "global_modified"
    cfl_advective: float = 0.5
    cfl_viscous: float = 0.4
    dealias: bool = True
    snapshot_stride: int = 10
    keep_mean: bool = True
    # test/debug switches
    convection: bool = True
    include_F: bool = True
    include_G: bool = True
    freeze_velocity: bool = False
    outer_projection: bool = False
    enforce_admissibility: bool = True
    # θ-transport coefficients (chart = "theta_transport")
    theta: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.chart not in SYSTEMS:
            raise ConfigError(f"unknown system {self.chart!r}; expected one of {SYSTEMS}")
        if self.dt != "auto" and not (isinstance(self.dt, (int, float)) and self.dt > 0):
            raise ConfigError(f"dt must be 'auto' or a positive number, got {self.dt!r}")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if self.ell is not None and self.ell < 1:
            raise ConfigError("ell must be >= 1")
        if not (self.cfl_advective > 0 and self.cfl_viscous > 0):
            raise ConfigError("CFL safety factors must be positive")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be a positive integer")
        if self.theta_chart and self.beta < 0:
            raise ConfigError("beta must be nonnegative")

    @property
    def theta_chart(self):
        return self.chart == "theta_transport"

    @property
    def state_chart(self):
        """Chart of the State objects this system evolves."""
        return "local_modified" if self.theta_chart else self.chart

    def linear_only(self):
        return replace(self, convection=False, include_F=False, include_G=False)


# ----------------------------------------------------------- linear oracle


@dataclass(frozen=True)
class LinearModeSolution:
    """Propagator of the constant-coefficient system for a set of modes.

    ``E`` has shape ``(2, 2, *modes)`` and acts on (m̂, ξ·û/|ξ|); ``transverse``
    multiplies the part of û orthogonal to ξ.
    """

    xi: np.ndarray
    t: float
    E: np.ndarray
    transverse: np.ndarray

    def apply(self, m0_hat, u0_hat):
        xi = self.xi
        kabs = np.sqrt(np.sum(xi**2, axis=0))
        safe = np.where(kabs > 0, kabs, 1.0)
        e = np.where(kabs > 0, xi / safe, 0.0)
        w0 = np.sum(e * u0_hat, axis=0)
        uT = u0_hat - e * w0
        m = self.E[0, 0] * m0_hat + self.E[0, 1] * w0
        w = self.E[1, 0] * m0_hat + self.E[1, 1] * w0
        u = uT * self.transverse + e * w
        # ξ = 0: the mean of m is constant and the mean velocity is untouched
        m = np.where(kabs > 0, m, m0_hat)
        u = np.where(kabs > 0, u, u0_hat)
        return m, u


def linear_mode_propagator(xi, t, c: DerivedConstants) -> LinearModeSolution:
    if t < 0:
        raise ValueError("t must be nonnegative")
    xi = np.asarray(xi, dtype=float)
    kap = np.sqrt(np.sum(xi**2, axis=0)).astype(complex)
    am = c.a * c.m_bar
    M = np.array([[np.zeros_like(kap), -1j * am * kap],
                  [-1j * c.C0 * kap, -c.nu * kap**2]])
    sigma = -0.5 * c.nu * kap**2
    det = am * c.C0 * kap**2
    delta = np.sqrt(sigma**2 - det)
    delta = np.where(delta.real < 0, -delta, delta)
    z = delta * t
    small = np.abs(z) < 1e-2
    zs = np.where(small, z, 0.0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ep = np.exp((sigma + delta) * t)
        em = np.exp((sigma - delta) * t)
        ch = 0.5 * (ep + em)
        sh = np.where(small, 0.0, (ep - em) / (2 * np.where(small, 1.0, delta)))
    es = np.exp(sigma * t)
    ch = np.where(small, es * (1 + zs**2 / 2 + zs**4 / 24 + zs**6 / 720), ch)
    sh = np.where(small, es * t * (1 + zs**2 / 6 + zs**4 / 120 + zs**6 / 5040), sh)
    eye = np.eye(2).reshape((2, 2) + (1,) * kap.ndim)
    E = ch * eye + sh * (M - sigma * eye)
    transverse = np.exp(-c.mu * np.sum(xi**2, axis=0) * t)
    return LinearModeSolution(xi=xi, t=float(t), E=E, transverse=transverse)


def solve_linear_exact(m0_hat, u0_hat, xi, t, c: DerivedConstants):
    """Exact per-mode solution of the constant-coefficient linear system.

    ``xi`` has a leading component axis; ``m0_hat`` is shaped like one
    component of ``xi`` and ``u0_hat`` like ``xi``.
    """
    return linear_mode_propagator(xi, t, c).apply(np.asarray(m0_hat, complex),
                                                  np.asarray(u0_hat, complex))


def solve_linear_state(state: State, t, c: DerivedConstants) -> State:
    """Apply the exact linear flow to a global-chart state on its grid."""
    state.require("global_modified")
    o = ops(state.grid)
    m_hat, u_hat = solve_linear_exact(state.first.coeffs[0], state.u.coeffs, o.k, t, c)
    g = state.grid
    return State("global_modified", SpectralField.from_coeffs(g, m_hat), state.second,
                 SpectralField.from_coeffs(g, u_hat))


# ------------------------------------------------------------- RHS engine


class SpectralRHS:
    """Right-hand side of one system on one grid, acting on packed arrays."""

    def __init__(self, grid: Grid, config: SolverConfig, c: DerivedConstants):
        self.grid, self.config, self.c = grid, config, c
        self.o = ops(grid)
        mask = friedrichs_mask(grid, config.ell, config.keep_mean)
        if config.dealias:
            mask = mask * self.o.dealias_mask
        self.mask = mask
        self.fmask = friedrichs_mask(grid, config.ell, config.keep_mean)
        self.d = grid.dim
        self.time = None

    # spectral helpers (coefficient arrays carry a leading component axis)
    def fwd(self, a):
        return self.o.forward(a)

    def inv(self, a):
        return self.o.inverse(a)

    def project(self, Y):
        return self.inv(self.fwd(Y) * self.mask)

    def grad(self, s_hat):
        return 1j * self.o.k_odd * s_hat

    def lame_hat(self, u_hat):
        c = self.c
        div_hat = np.sum(1j * self.o.k_odd * u_hat, axis=0)
        return -c.mu * self.o.k2 * u_hat + (c.mu + c.lam) * 1j * self.o.k_odd * div_hat

    def __call__(self, Y, t=None):
        self.time = t
        if self.config.outer_projection:
            Y = self.inv(self.fwd(Y) * self.fmask)
        chart = self.config.chart
        if chart == "global_modified":
            out = self._global(Y)
        elif chart == "local_modified":
            out = self._local(Y)
        else:
            out = self._theta(Y)
        if self.config.freeze_velocity:
            out[2:] = 0.0
        if self.config.outer_projection:
            out = self.inv(self.fwd(out) * self.fmask)
        return out

    def _common(self, Y):
        Yh = self.fwd(Y)
        s1_hat, s2_hat, u_hat = Yh[0], Yh[1], Yh[2:]
        d1 = self.inv(self.grad(s1_hat))
        d2 = self.inv(self.grad(s2_hat))
        div_hat = np.sum(1j * self.o.k_odd * u_hat, axis=0)
        div = self.inv(div_hat)
        return Yh, d1, d2, div_hat, div

    def _convect(self, u, dfield):
        return np.einsum("i...,i...->...", u, dfield)

    def _velocity_gradient(self, u_hat):
        # du[j, i] = ∂_i u_j
        return self.inv(1j * self.o.k_odd[None] * u_hat[:, None])

    def _global(self, Y):
        c, cfg = self.c, self.config
        m, n, u = Y[0], Y[1], Y[2:]
        if cfg.enforce_admissibility:
            self._check_admissible(m, n)
        Yh, dm, dn, div_hat, div = self._common(Y)
        m_hat, u_hat = Yh[0], Yh[2:]
        lame_hat = self.lame_hat(u_hat)

        nl_n = np.zeros_like(m)
        nl_m = np.zeros_like(m)
        nl_u = np.zeros_like(u)
        if cfg.convection:
            nl_n -= self._convect(u, dn)
            nl_m -= self._convect(u, dm)
            du = self._velocity_gradient(u_hat)
            nl_u -= np.einsum("i...,ji...->j...", u, du)
        if cfg.include_F:
            nl_m -= (m - c.b * n) * div
        if cfg.include_G:
            H = h_kernel(m, n, dm, dn, c, self.grid, self.time)
            mt = modified_mtilde(m, n, c)
            nl_u -= c.C0 * H + ((m - c.b * n) / (c.a * mt)) * self.inv(lame_hat)
        out = self.fwd(np.concatenate([nl_m[None], nl_n[None], nl_u]))
        out[0] -= c.a * c.m_bar * div_hat
        out[2:] += lame_hat - c.C0 * self.grad(m_hat)
        return self.inv(out * self.mask)

    def _local(self, Y):
        c = self.c
        rho, g, u = Y[0], Y[1], Y[2:]
        check_vacuum(1.0 + rho, self.grid, "1 + rho", self.time)
        Yh, drho, dg, div_hat, div = self._common(Y)
        u_hat = Yh[2:]
        out = np.empty_like(Y)
        conv = self.config.convection
        out[0] = (1.0 + rho) * div - (self._convect(u, drho) if conv else 0.0)
        out[1] = -(g + c.n_bar) * div - (self._convect(u, dg) if conv else 0.0)
        acc = (1.0 + rho) * self.inv(self.lame_hat(u_hat))
        acc -= q_kernel(rho, g, drho, dg, c, self.grid, self.time)
        if conv:
            du = self._velocity_gradient(u_hat)
            acc -= np.einsum("i...,ji...->j...", u, du)
        out[2:] = acc
        return self.inv(self.fwd(out) * self.mask)

    def _theta(self, Y):
        cfg = self.config
        h, v = Y[0], Y[2:]
        Yh, dh, _, _, div = self._common(Y)
        out = np.zeros_like(Y)
        rhs = cfg.theta * (h + cfg.beta) * div
        if cfg.convection:
            rhs = rhs - self._convect(v, dh)
        out[0] = self.inv(self.fwd(rhs) * self.mask)
        return out

    def _check_admissible(self, m, n):
        R = self.c.admissibility_radius
        worst = max(float(np.abs(m).max()), float(np.abs(n).max()))
        if not worst <= R:
            raise AdmissibilityFault(
                f"sup(|m|, |n|) = {worst:.4g} exceeds the admissibility radius {R:.4g}",
                time=self.time, bound=R, value=worst)

    # stability bound -------------------------------------------------
    def stable_dt(self, Y):
        """Largest dt the CFL rules allow on state ``Y``."""
        cfg, c = self.config, self.c
        live = self.mask > 0
        kabs = self.o.kabs[live]
        kmax = float(kabs.max()) if kabs.size else 0.0
        if kmax == 0:
            return math.inf
        u = Y[2:]
        umax = float(np.sqrt(np.sum(u**2, axis=0)).max())
        if cfg.chart == "theta_transport":
            speed, nu = umax, 0.0
        else:
            mt, nt = self._physical_masses(Y)
            speed = umax + self._sound_speed(mt, nt)
            nu = c.nu_upper
            if cfg.chart == "local_modified":
                nu *= float((1.0 + Y[0]).max())
        dt_adv = cfg.cfl_advective * RK4_IMAG_LIMIT / (speed * kmax) if speed > 0 else math.inf
        dt_visc = cfg.cfl_viscous * RK4_REAL_LIMIT / (nu * kmax**2) if nu > 0 else math.inf
        return min(dt_adv, dt_visc)

    def _physical_masses(self, Y):
        c = self.c
        if self.config.chart == "global_modified":
            mt = modified_mtilde(Y[0], Y[1], c)
            return mt, mt * (Y[1] / c.a0 + c.n_bar / c.m_bar)
        return c.m_bar / (1.0 + Y[0]), Y[1] + c.n_bar

    def _sound_speed(self, mt, nt):
        c = self.c
        X = mt + c.a0 * nt - c.k0
        R = np.sqrt(X**2 + 4 * c.k0 * c.a0 * nt)
        dP_dm = c.C0 * (1 + X / R)
        dP_dn = c.C0 * (c.a0 + (c.a0 * X + 2 * c.k0 * c.a0) / R)
        cs2 = dP_dm + nt * dP_dn / mt
        return float(np.sqrt(np.maximum(cs2, 0.0)).max())


# --------------------------------------------------------- public RHS API


def _state_rhs(state: State, config: SolverConfig, c: DerivedConstants, chart):
    state.require(config.state_chart if chart is None else chart)
    rhs = SpectralRHS(state.grid, config, c)
    return State.unpack(state.chart, state.grid, rhs(state.pack()))


def rhs_global(state: State, config: SolverConfig, c: DerivedConstants) -> State:
    """Time derivative of a global-chart state (returned as a State)."""
    config = replace(config, chart="global_modified") if config.chart != "global_modified" else config
    return _state_rhs(state, config, c, "global_modified")


def rhs_local(state: State, config: SolverConfig, c: DerivedConstants) -> State:
    config = replace(config, chart="local_modified") if config.chart != "local_modified" else config
    return _state_rhs(state, config, c, "local_modified")


def rhs_theta_transport(h: SpectralField, v: SpectralField, theta: float, beta: float,
                        dealias=True, ell=None) -> SpectralField:
    """−v·∇h + θ(h + β) div v."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    cfg = SolverConfig(chart="theta_transport", theta=theta, beta=beta,
                       dealias=dealias, ell=ell)
    rhs = SpectralRHS(h.grid, cfg, None)
    Y = np.concatenate([h.values, np.zeros_like(h.values), v.values])
    return SpectralField(h.grid, rhs(Y)[0])


# ------------------------------------------------------------ integrator


def rk4_arrays(Y, rhs: Callable, dt: float, t: float = 0.0):
    k1 = rhs(Y, t)
    k2 = rhs(Y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(Y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(Y + dt * k3, t + dt)
    out = Y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise BlowUpFault(f"non-finite value after step to t = {t + dt:.6g}", time=t + dt)
    return out


def step_rk4(state: State, rhs: Callable, dt: float, t: float = 0.0) -> State:
    """One classical RK4 step; ``rhs`` maps a State to its time derivative."""
    grid, chart = state.grid, state.chart

    def f(Y, _t):
        return rhs(State.unpack(chart, grid, Y)).pack()

    return State.unpack(chart, grid, rk4_arrays(state.pack(), f, dt, t))


# ------------------------------------------------------------ simulation


@dataclass
class SimulationResult:
    config: SolverConfig
    dt: float
    records: list
    states: list = field(default_factory=list)
    final: Optional[State] = None
    fault: Optional[SolverFault] = None
    monitor_events: list = field(default_factory=list)
    steps: int = 0

    @property
    def completed(self):
        return self.fault is None


def choose_dt(rhs: SpectralRHS, Y0, config: SolverConfig):
    """Uniform step reaching ``t_end`` exactly, within the bound at t = 0."""
    if config.dt == "auto":
        bound = rhs.stable_dt(Y0)
        if not math.isfinite(bound):
            bound = config.t_end / 16
        nsteps = max(1, math.ceil(config.t_end / bound * (1 - 1e-12)))
        stride = config.snapshot_stride
        nsteps = stride * math.ceil(nsteps / stride)
    else:
        nsteps = max(1, round(config.t_end / float(config.dt)))
        if not math.isclose(nsteps * float(config.dt), config.t_end, rel_tol=1e-9):
            raise ConfigError(f"dt = {config.dt} does not divide t_end = {config.t_end}")
    return config.t_end / nsteps, nsteps


def run_simulation(initial: State, config: SolverConfig, c: DerivedConstants,
                   diag_config: Optional["diag.DiagnosticsConfig"] = None,
                   monitor: Optional["diag.ContinuationMonitor"] = None,
                   keep_states=False, raise_on_fault=True, check_stability=True,
                   on_record=None) -> SimulationResult:
    """Advance ``initial`` to ``config.t_end`` with RK4.

    One DiagnosticsRecord is produced every ``snapshot_stride`` steps (and at
    t = 0).  The continuation monitor is fed every step so that it can fire
    between records.  On a fault the partial result is attached to the
    exception as ``exc.result`` (or returned with ``fault`` set when
    ``raise_on_fault`` is false).
    """
    initial.require(config.state_chart)
    grid = initial.grid
    diag_config = diag_config or diag.DiagnosticsConfig.for_grid(grid)
    rhs = SpectralRHS(grid, config, c)
    # the semi-discrete system lives on the range of the spectral mask
    Y = rhs.project(initial.pack())
    dt, nsteps = choose_dt(rhs, Y, config)
    builder = diag.RecordBuilder(grid, c, config.chart, diag_config)
    result = SimulationResult(config=config, dt=dt, records=[])

    def emit(Y, t, regular=True):
        st = State.unpack(config.state_chart, grid, Y)
        rec = builder.record(st, t, monitor)
        if not regular:
            rec = replace(rec, regular=False)
        result.records.append(rec)
        if keep_states:
            result.states.append((t, st))
        if on_record is not None:
            on_record(rec)

    def feed_monitor(Y, t):
        if monitor is None or config.theta_chart:
            return
        before = monitor.status
        monitor.observe_pointwise(*builder.monitor_quantities(Y), t)
        if monitor.status != before:
            result.monitor_events.append((t, monitor.status))

    t = 0.0
    try:
        feed_monitor(Y, t)
        emit(Y, t)
        for step in range(1, nsteps + 1):
            if check_stability:
                bound = rhs.stable_dt(Y)
                if dt > bound:
                    raise StabilityFault(f"dt = {dt:.4g} exceeds the stability bound {bound:.4g}",
                                         time=t)
            Y = rk4_arrays(Y, rhs, dt, t)
            t = step * dt
            result.steps = step
            before = monitor.status if monitor is not None else None
            feed_monitor(Y, t)
            fired = monitor is not None and monitor.status != before
            on_grid = step % config.snapshot_stride == 0
            if on_grid or step == nsteps or fired:
                emit(Y, t, regular=on_grid)
    except SolverFault as exc:
        if exc.time is None:
            exc.time = t
        result.fault = exc
        result.final = State.unpack(config.state_chart, grid, Y)
        if monitor is not None:
            monitor.note_fault(exc)
        if raise_on_fault:
            exc.result = result
            raise
        return result
    result.final = State.unpack(config.state_chart, grid, Y)
    return result
