"""Drift-flux model: parameters, pressure law, coordinate charts, nonlinearities.

Pointwise algebra is done on physical samples; gradients are spectral.  The
``*_kernel`` functions take raw arrays (scalars shaped like the grid, vectors
with a leading component axis) and are what the solver calls; the public
functions wrap them for :class:`SpectralField` arguments.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ChartError, ConfigError, ParameterError, VacuumFault
from .lp_besov import SpectralField, dealias, spectral_derivative

EPS_VAC = 1e-8

CHARTS = ("physical", "global_modified", "local_modified")


@dataclass(frozen=True)
class PhysParams:
    mu_tilde: float
    lambda_tilde: float
    a_l: float
    a_g: float
    P_l0: float
    rho_l0: float
    m_bar: float
    n_bar: float
    dim: int = 2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ParameterError(f"{f.name} finite", f"{f.name} = {v} is not finite")
        if self.dim < 2 or int(self.dim) != self.dim:
            raise ParameterError("dim >= 2")
        if not self.mu_tilde > 0:
            raise ParameterError("mu_tilde > 0")
        if not 2 * self.mu_tilde + self.dim * self.lambda_tilde >= 0:
            raise ParameterError("2*mu_tilde + dim*lambda_tilde >= 0")
        if not (self.a_l > 0 and self.a_g > 0):
            raise ParameterError("a_l > 0 and a_g > 0")
        if not self.m_bar > 0:
            raise ParameterError("m_bar > 0")
        if not self.n_bar >= 0:
            raise ParameterError("n_bar >= 0")
        if not self.k0 > 0:
            raise ParameterError("k0 = rho_l0 - P_l0/a_l^2 > 0")

    @property
    def k0(self):
        return self.rho_l0 - self.P_l0 / self.a_l**2

    def check_global(self):
        """Extra hypotheses of the small-data global theory; raises ParameterError."""
        if not self.m_bar > (1 - np.sign(self.n_bar)) * self.k0:
            raise ParameterError("m_bar > (1 - sgn n_bar) k0")
        if self.dim == 2 and not self.mu_tilde + self.lambda_tilde > 0:
            raise ParameterError("mu_tilde + lambda_tilde > 0 (d = 2)")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DerivedConstants:
    C0: float
    k0: float
    a0: float
    a: float
    b: float
    mu: float
    lam: float
    A: float
    nu_lower: float
    nu_upper: float
    K00: float
    m_bar: float
    n_bar: float
    dim: int

    @property
    def nu(self):
        """Longitudinal viscosity 2μ + λ."""
        return 2 * self.mu + self.lam

    @property
    def admissibility_radius(self):
        """Sup-norm radius for (m, n) that keeps m̃ within [m̄/2, 3m̄/2]."""
        return self.a * self.m_bar / (2 * (1 + self.b))

    def to_dict(self):
        return asdict(self)


def derive_constants(p: PhysParams) -> DerivedConstants:
    C0 = p.a_l**2 / 2
    k0 = p.k0
    a0 = p.a_g**2 / p.a_l**2
    mb, nb = p.m_bar, p.n_bar
    s = mb + a0 * nb
    S = math.sqrt((s - k0) ** 2 + 4 * k0 * a0 * nb)
    if S == 0:
        raise ParameterError("(m_bar + a0 n_bar - k0)^2 + 4 k0 a0 n_bar > 0")
    # linearisation coefficient ∂_m̃(P/C₀)/m̄ at equilibrium (see notes/decisions)
    a = (s + (s * (s - k0) + 2 * k0 * a0 * nb) / S) / mb**2
    b = 1 + (s + k0) / S
    if not (a > 0 and b > 0):
        raise ParameterError("a > 0 and b > 0")
    mu = p.mu_tilde / mb
    lam = p.lambda_tilde / mb
    return DerivedConstants(
        C0=C0, k0=k0, a0=a0, a=a, b=b, mu=mu, lam=lam,
        A=(mu + lam) / (2 * a * mb),
        nu_lower=min(mu, lam + 2 * mu),
        nu_upper=mu + abs(mu + lam),
        K00=1 / S, m_bar=mb, n_bar=nb, dim=p.dim,
    )


# ------------------------------------------------------------ pressure


def pressure_over_C0(mt, nt, c: DerivedConstants):
    """P/C₀ = −b + √(b² + c) evaluated without cancellation."""
    mt = np.asarray(mt, dtype=float)
    nt = np.asarray(nt, dtype=float)
    bq = c.k0 - mt - c.a0 * nt
    cq = 4 * c.k0 * c.a0 * nt
    rad = bq * bq + cq
    if np.any(rad < 0):
        raise FloatingPointError("negative radicand in the pressure law")
    root = np.sqrt(rad)
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = np.where(bq > 0, cq / (bq + root), root - bq)
    return stable


def pressure(m_t, n_t, c: DerivedConstants):
    """Common pressure P(m̃, ñ); accepts fields, arrays or scalars."""
    if isinstance(m_t, SpectralField):
        return SpectralField(m_t.grid, c.C0 * pressure_over_C0(m_t.data, _data(n_t), c))
    out = c.C0 * pressure_over_C0(m_t, n_t, c)
    return float(out) if np.ndim(out) == 0 else out


def _data(f):
    return f.data if isinstance(f, SpectralField) else np.asarray(f, dtype=float)


# --------------------------------------------------------------- state


@dataclass(frozen=True)
class State:
    """Unknowns in one chart: (m̃, ñ, u), (m, n, u) or (ρ, g, u)."""

    chart: str
    first: SpectralField
    second: SpectralField
    u: SpectralField

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise ChartError(f"unknown chart {self.chart!r}")
        if self.first.is_vector or self.second.is_vector or not self.u.is_vector:
            raise ValueError("State expects two scalar fields and one vector field")
        if not (self.first.grid == self.second.grid == self.u.grid):
            raise ValueError("State fields live on different grids")

    @property
    def grid(self):
        return self.u.grid

    @property
    def names(self):
        return {"physical": ("mtilde", "ntilde"),
                "global_modified": ("m", "n"),
                "local_modified": ("rho", "g")}[self.chart] + ("u",)

    def require(self, chart):
        if self.chart != chart:
            raise ChartError(f"expected a {chart} state, got {self.chart}")
        return self

    def pack(self):
        """Stack physical samples into one ``(2 + d, *shape)`` array."""
        return np.concatenate([self.first.values, self.second.values, self.u.values])

    @classmethod
    def unpack(cls, chart, grid, arr):
        return cls(chart, SpectralField(grid, arr[0]), SpectralField(grid, arr[1]),
                   SpectralField(grid, arr[2:]))

    @classmethod
    def equilibrium(cls, grid, c: DerivedConstants, chart="global_modified"):
        zero = SpectralField.zeros(grid)
        u = SpectralField.zeros(grid, vector=True)
        if chart == "physical":
            return cls(chart, zero + c.m_bar, zero + c.n_bar, u)
        return cls(chart, zero, zero, u)


def check_vacuum(arr, grid, what, time=None, eps=EPS_VAC):
    """Raise VacuumFault if ``arr`` drops below ``eps`` anywhere."""
    i = int(np.argmin(arr))
    v = float(arr.flat[i])
    if not v >= eps:
        idx = np.unravel_index(i, arr.shape)
        loc = tuple(float(j * grid.dx) for j in idx[-grid.dim:])
        raise VacuumFault(f"{what} = {v:.3e} < {eps:g} at x = {loc}", time=time,
                          location=loc, value=v)


def to_modified(state: State, c: DerivedConstants) -> State:
    state.require("physical")
    mt, nt = state.first.data, state.second.data
    check_vacuum(mt, state.grid, "mtilde")
    n = c.a0 * (nt / mt - c.n_bar / c.m_bar)
    m = c.a * (mt - c.m_bar) + c.b * n
    g = state.grid
    return State("global_modified", SpectralField(g, m), SpectralField(g, n), state.u)


def modified_mtilde(m, n, c: DerivedConstants):
    return c.m_bar + (m - c.b * n) / c.a


def from_modified(state: State, c: DerivedConstants) -> State:
    state.require("global_modified")
    m, n = state.first.data, state.second.data
    mt = modified_mtilde(m, n, c)
    check_vacuum(mt, state.grid, "mtilde")
    nt = mt * (n / c.a0 + c.n_bar / c.m_bar)
    g = state.grid
    return State("physical", SpectralField(g, mt), SpectralField(g, nt), state.u)


def to_local(state: State, c: DerivedConstants) -> State:
    state.require("physical")
    mt = state.first.data
    check_vacuum(mt, state.grid, "mtilde")
    g = state.grid
    return State("local_modified", SpectralField(g, c.m_bar / mt - 1.0),
                 SpectralField(g, state.second.data - c.n_bar), state.u)


def from_local(state: State, c: DerivedConstants) -> State:
    state.require("local_modified")
    one_rho = 1.0 + state.first.data
    check_vacuum(one_rho, state.grid, "1 + rho")
    g = state.grid
    return State("physical", SpectralField(g, c.m_bar / one_rho),
                 SpectralField(g, state.second.data + c.n_bar), state.u)


def convert(state: State, chart: str, c: DerivedConstants) -> State:
    """Move a state to any chart, passing through the physical one."""
    if state.chart == chart:
        return state
    phys = {"physical": lambda s: s,
            "global_modified": lambda s: from_modified(s, c),
            "local_modified": lambda s: from_local(s, c)}[state.chart](state)
    return {"physical": lambda s: s,
            "global_modified": lambda s: to_modified(s, c),
            "local_modified": lambda s: to_local(s, c)}[chart](phys)


# ------------------------------------------------------ global chart


def K_kernel(m, n, c: DerivedConstants, grid=None):
    mt = modified_mtilde(m, n, c)
    r = c.a0 * c.n_bar / c.m_bar
    rad = (mt * (n + r + 1) - c.k0) ** 2 + 4 * c.k0 * (n + r) * mt
    if grid is not None:
        check_vacuum(rad, grid, "K radicand")
    return 1.0 / np.sqrt(rad)


def K(m, n, c: DerivedConstants):
    """Closed-form kernel K(m, n) of the pressure-gradient decomposition."""
    if isinstance(m, SpectralField):
        return SpectralField(m.grid, K_kernel(m.data, n.data, c, m.grid))
    out = K_kernel(np.asarray(m, float), np.asarray(n, float), c)
    return float(out) if np.ndim(out) == 0 else out


def h_kernel(m, n, dm, dn, c: DerivedConstants, grid, time=None):
    """H(m, n) from samples of m, n and their gradients (no dealiasing)."""
    a, b, k0, mb = c.a, c.b, c.k0, c.m_bar
    r = c.a0 * c.n_bar / mb
    mt = modified_mtilde(m, n, c)
    check_vacuum(mt, grid, "mtilde", time)
    Kmn = K_kernel(m, n, c, grid)
    D = dm - b * dn
    mbn = m - b * n
    nr1 = n + r + 1
    s1 = (-(c.a0 * c.n_bar + mb) * m + (a * mb**2 + b * (c.a0 * c.n_bar + mb)) * n) / (a**2 * mb**2 * mt)
    t1 = s1 * D
    t2 = (Kmn - c.K00) * (nr1 * mt * dn + (nr1**2 / a) * D
                          + (k0 * (n + r - 1) / (a * mt)) * D + k0 * dn)
    t3 = c.K00 * ((nr1 * mbn / a + mb * n) * dn
                  + ((n**2 + 2 * n * (r + 1)) / a + k0 * n / (a * mt)
                     - k0 * (r - 1) * mbn / (a**2 * mb * mt)) * D)
    return t1 + t2 + t3


def nonlinear_H(m: SpectralField, n: SpectralField, c: DerivedConstants, dealiased=True):
    dm = spectral_derivative(m, "gradient").values
    dn = spectral_derivative(n, "gradient").values
    out = SpectralField(m.grid, h_kernel(m.data, n.data, dm, dn, c, m.grid))
    return dealias(out) if dealiased else out


def h_oracle(m: SpectralField, n: SpectralField, c: DerivedConstants):
    """∇P/(C₀m̃) − ∇m computed through the pressure law (definitional H)."""
    mt = modified_mtilde(m.data, n.data, c)
    check_vacuum(mt, m.grid, "mtilde")
    nt = mt * (n.data / c.a0 + c.n_bar / c.m_bar)
    p = SpectralField(m.grid, pressure_over_C0(mt, nt, c))
    return spectral_derivative(p, "gradient") / mt - spectral_derivative(m, "gradient")


def rhs_F(m, n, u, c: DerivedConstants):
    div = spectral_derivative(u, "divergence")
    return dealias(SpectralField(m.grid, -(m.data - c.b * n.data) * div.data))


def lame(u: SpectralField, c: DerivedConstants):
    """μΔu + (μ+λ)∇div u."""
    lap = spectral_derivative(u, "laplacian")
    gd = spectral_derivative(spectral_derivative(u, "divergence"), "gradient")
    return lap * c.mu + gd * (c.mu + c.lam)


def rhs_G(m, n, u, c: DerivedConstants):
    H = nonlinear_H(m, n, c, dealiased=False)
    mt = modified_mtilde(m.data, n.data, c)
    pref = (m.data - c.b * n.data) / (c.a * mt)
    return dealias(H * (-c.C0) - lame(u, c) * pref)


# ------------------------------------------------------- local chart


def b_kernel(rho, g, c: DerivedConstants, grid=None, time=None):
    one_rho = 1.0 + rho
    if grid is not None:
        check_vacuum(one_rho, grid, "1 + rho", time)
    gn = g + c.n_bar
    rad = (c.m_bar / one_rho + c.a0 * gn - c.k0) ** 2 + 4 * c.k0 * c.a0 * gn
    if grid is not None:
        check_vacuum(rad, grid, "B radicand", time)
    return rad**-0.5


def local_B(rho, g, c: DerivedConstants):
    if isinstance(rho, SpectralField):
        return SpectralField(rho.grid, b_kernel(rho.data, g.data, c, rho.grid))
    out = b_kernel(np.asarray(rho, float), np.asarray(g, float), c)
    return float(out) if np.ndim(out) == 0 else out


def q_kernel(rho, g, drho, dg, c: DerivedConstants, grid, time=None):
    mb, a0, k0, nb = c.m_bar, c.a0, c.k0, c.n_bar
    B = b_kernel(rho, g, c, grid, time)
    r1 = rho + 1.0
    coef_r = rho / r1 - 1.0 + B * (-mb / r1**2 + (k0 - a0 * nb) / r1 - a0 * g / r1)
    coef_g = (a0 / mb) * r1 + B * ((a0**2 / mb) * (g + g * rho)
                                   + a0 * (k0 + mb + a0 * nb) / mb
                                   + (a0 * k0 + a0**2 * nb) / mb * rho)
    return c.C0 * (coef_r * drho + coef_g * dg)


def local_Q(rho: SpectralField, g: SpectralField, c: DerivedConstants, dealiased=True):
    dr = spectral_derivative(rho, "gradient").values
    dg = spectral_derivative(g, "gradient").values
    out = SpectralField(rho.grid, q_kernel(rho.data, g.data, dr, dg, c, rho.grid))
    return dealias(out) if dealiased else out


def q_oracle(rho: SpectralField, g: SpectralField, c: DerivedConstants):
    """m̄⁻¹(1+ρ)∇P(m̄/(1+ρ), g+n̄) through the pressure law."""
    one_rho = 1.0 + rho.data
    check_vacuum(one_rho, rho.grid, "1 + rho")
    p = pressure(c.m_bar / one_rho, g.data + c.n_bar, c)
    return spectral_derivative(SpectralField(rho.grid, p), "gradient") * (one_rho / c.m_bar)


def linearized_Q_coefficients(c: DerivedConstants):
    """(c_ρ, c_g) with Q = c_ρ∇ρ + c_g∇g + O(|ρ,g|²)."""
    B0 = c.K00
    s = c.m_bar + c.a0 * c.n_bar
    c_rho = -c.C0 * (1 + B0 * (s - c.k0))
    c_g = c.C0 * (c.a0 / c.m_bar) * (1 + B0 * (s + c.k0))
    return c_rho, c_g


# -------------------------------------------------------- param files

PARAM_KEYS = ("mu_tilde", "lambda_tilde", "a_l", "a_g", "P_l0", "rho_l0", "m_bar", "n_bar", "dim")


def params_from_mapping(section, where="params") -> PhysParams:
    missing = [k for k in PARAM_KEYS[:-1] if k not in section]
    if missing:
        raise ConfigError(f"[{where}] missing key(s): {', '.join(missing)}")
    unknown = [k for k in section if k not in PARAM_KEYS]
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")
    values = {}
    for k in PARAM_KEYS:
        if k not in section:
            continue
        raw = section[k]
        try:
            values[k] = int(raw) if k == "dim" else float(raw)
        except ValueError:
            raise ConfigError(f"[{where}] {k} = {raw!r} is not a number") from None
    return PhysParams(**values)


def load_params(path) -> PhysParams:
    """Read a ``[params]`` section of key = value pairs."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with Path(path).open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not cp.has_section("params"):
        raise ConfigError(f"{path}: no [params] section")
    return params_from_mapping(cp["params"])


def reference_params(dim=2) -> PhysParams:
    """Parameter set used by the default scenarios (n̄ > 0, μ̃ + λ̃ > 0)."""
    return PhysParams(mu_tilde=0.5, lambda_tilde=0.3, a_l=1.2, a_g=0.8, P_l0=0.5,
                      rho_l0=1.0, m_bar=1.2, n_bar=0.4, dim=dim)
