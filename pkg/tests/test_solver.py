import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from conftest import smooth_random
from driftflux.errors import BlowUpFault, ConfigError, StabilityFault
from driftflux.initial_data import Recipe, make_initial_data
from driftflux.lp_besov import SpectralField, spectral_derivative
from driftflux.model import State, lame
from driftflux.solver import (SolverConfig, SpectralRHS, choose_dt, linear_mode_propagator,
                              rhs_global, rhs_local, rhs_theta_transport, rk4_arrays,
                              run_simulation, solve_linear_exact, step_rk4)


def matrix(kappa, c):
    am = c.a * c.m_bar
    return np.array([[0.0, -1j * am * kappa], [-1j * c.C0 * kappa, -c.nu * kappa**2]])


# -------------------------------------------------------- linear oracle

def test_propagator_identity_at_zero(consts):
    xi = np.array([[1.0, 0.0, 3.0], [0.0, 2.0, -4.0]])
    E = linear_mode_propagator(xi, 0.0, consts).E
    assert np.allclose(E, np.eye(2)[:, :, None], atol=1e-15)


@given(st.floats(0.05, 30.0), st.floats(0.0, 3.0))
def test_propagator_matches_expm(kappa, t):
    from driftflux.model import derive_constants, reference_params
    c = derive_constants(reference_params())
    E = linear_mode_propagator(np.array([[kappa], [0.0]]), t, c).E[:, :, 0]
    ref = expm(matrix(kappa, c) * t)
    assert np.allclose(E, ref, rtol=1e-10, atol=1e-13)


def test_propagator_at_degenerate_discriminant(consts):
    am = consts.a * consts.m_bar
    kappa = 2 * math.sqrt(am * consts.C0) / consts.nu   # ν²κ⁴/4 = a m̄ C₀ κ²
    for t in (1e-3, 0.1, 1.0):
        E = linear_mode_propagator(np.array([[kappa], [0.0]]), t, consts).E[:, :, 0]
        assert np.allclose(E, expm(matrix(kappa, consts) * t), rtol=1e-10, atol=1e-14)


def test_transverse_heat_decay(consts):
    xi = np.array([[2.0], [1.0]])
    u0 = np.array([[1.0], [-2.0]], dtype=complex)  # orthogonal to ξ
    m, u = solve_linear_exact(np.zeros(1), u0, xi, 0.7, consts)
    assert abs(m[0]) < 1e-16
    assert np.allclose(u, u0 * math.exp(-consts.mu * 5.0 * 0.7), rtol=1e-14)


def test_inviscid_oscillation_conserves_quadratic(consts):
    c = dataclasses.replace(consts, mu=0.0, lam=0.0)
    am = c.a * c.m_bar
    kappa = 3.0
    xi = np.array([[kappa], [0.0]])
    m0, u0 = np.array([0.2 + 0.1j]), np.array([[0.3 - 0.05j], [0.0]])
    q0 = c.C0 * abs(m0[0]) ** 2 / am + abs(u0[0, 0]) ** 2
    period = 2 * math.pi / (math.sqrt(am * c.C0) * kappa)
    for t in np.linspace(0, 2 * period, 9):
        m, u = solve_linear_exact(m0, u0, xi, t, c)
        assert abs(c.C0 * abs(m[0]) ** 2 / am + abs(u[0, 0]) ** 2 - q0) < 1e-13
    m, u = solve_linear_exact(m0, u0, xi, period, c)
    assert np.allclose(m, m0, atol=1e-12) and np.allclose(u, u0, atol=1e-12)


# ------------------------------------------------------------- RHS

@pytest.fixture(scope="module")
def small_state(grid64, consts):
    return make_initial_data(Recipe(target_E0=0.01), grid64, 3, consts)


def test_zero_state_has_zero_derivative(grid64, consts):
    z = State.equilibrium(grid64, consts)
    d = rhs_global(z, SolverConfig(), consts)
    assert np.max(np.abs(d.pack())) == 0.0
    zl = State.equilibrium(grid64, consts, "local_modified")
    assert np.max(np.abs(rhs_local(zl, SolverConfig(), consts).pack())) == 0.0


def test_n_frozen_without_velocity(grid64, consts, small_state):
    st_ = State("global_modified", small_state.first, small_state.second, small_state.u * 0.0)
    d = rhs_global(st_, SolverConfig(), consts)
    assert np.max(np.abs(d.second.data)) == 0.0


def test_linear_switch_reduces_to_linear_system(grid64, consts, small_state):
    cfg = SolverConfig().linear_only()
    d = rhs_global(small_state, cfg, consts)
    rhs = SpectralRHS(grid64, cfg, consts)
    st_ = State.unpack("global_modified", grid64, rhs.project(small_state.pack()))
    m, u = st_.first, st_.u
    dm = spectral_derivative(u, "divergence") * (-consts.a * consts.m_bar)
    du = lame(u, consts) - spectral_derivative(m, "gradient") * consts.C0
    scale = max(dm.sup_norm(), du.sup_norm())
    assert np.max(np.abs(d.first.data - dm.data)) <= 1e-13 * scale
    assert np.max(np.abs(d.u.values - du.values)) <= 1e-13 * scale
    assert np.max(np.abs(d.second.data)) == 0.0


def test_local_constant_state_is_steady(grid16, consts):
    c1 = SpectralField(grid16, np.full(grid16.shape, 0.3))
    st_ = State("local_modified", c1, c1 * 0.1, SpectralField.zeros(grid16, True))
    assert np.max(np.abs(rhs_local(st_, SolverConfig(), consts).pack())) < 1e-15


def test_local_divergence_free_velocity_keeps_masses(grid64, consts):
    psi = smooth_random(grid64, np.random.default_rng(1))
    grad = spectral_derivative(psi, "gradient")
    u = SpectralField(grid64, np.stack([grad.values[1], -grad.values[0]]))
    z = SpectralField.zeros(grid64)
    d = rhs_local(State("local_modified", z, z, u), SolverConfig(), consts)
    assert np.max(np.abs(d.first.data)) < 1e-14 and np.max(np.abs(d.second.data)) < 1e-14


def test_theta_transport_identifications(grid64, consts):
    rng = np.random.default_rng(2)
    rho = smooth_random(grid64, rng, amp=0.2)
    g = smooth_random(grid64, rng, amp=0.1)
    u = smooth_random(grid64, rng, vector=True, amp=0.3)
    d = rhs_local(State("local_modified", rho, g, u), SolverConfig(), consts)
    h_rho = rhs_theta_transport(rho, u, 1.0, 1.0)
    h_g = rhs_theta_transport(g, u, -1.0, consts.n_bar)
    assert np.max(np.abs(h_rho.data - d.first.data)) < 1e-13
    assert np.max(np.abs(h_g.data - d.second.data)) < 1e-13
    assert rhs_theta_transport(rho, u * 0.0, 1.0, 1.0).sup_norm() == 0.0
    with pytest.raises(ValueError):
        rhs_theta_transport(rho, u, 1.0, -1.0)


def test_theta_zero_is_pure_advection(grid64):
    rng = np.random.default_rng(3)
    h = smooth_random(grid64, rng)
    v = smooth_random(grid64, rng, vector=True)
    dh = spectral_derivative(h, "gradient")
    adv = -(dh.values * v.values).sum(axis=0)
    out = rhs_theta_transport(h, v, 0.0, 2.0, dealias=False)
    assert np.allclose(out.data, adv, atol=1e-12)


# ------------------------------------------------------------ RK4

def test_rk4_zero_rhs_is_identity(small_state):
    out = step_rk4(small_state, lambda s: State.unpack(s.chart, s.grid, 0 * s.pack()), 0.1)
    assert np.array_equal(out.pack(), small_state.pack())


def test_rk4_flags_nonfinite():
    with pytest.raises(BlowUpFault) as exc:
        rk4_arrays(np.ones(3), lambda Y, t: Y * np.inf, 0.1, 0.5)
    assert exc.value.time == pytest.approx(0.6)


def test_rk4_forward_backward_is_fifth_order(grid64, consts, small_state):
    cfg = SolverConfig(ell=4).linear_only()
    rhs = SpectralRHS(grid64, cfg, consts)
    Y0 = rhs.project(small_state.pack())
    errs = []
    for dt in (0.04, 0.02):
        Y = rk4_arrays(rk4_arrays(Y0, rhs, dt), rhs, -dt)
        errs.append(np.max(np.abs(Y - Y0)))
    # local error O(dt⁵); the forward/backward pair cancels the odd term, so ≥ 2⁵
    assert errs[0] / errs[1] > 25


def test_rk4_convergence_against_oracle(grid64, consts, small_state):
    cfg = SolverConfig(ell=4, t_end=0.5).linear_only()
    rhs = SpectralRHS(grid64, cfg, consts)
    Y0 = rhs.project(small_state.pack())
    st0 = State.unpack("global_modified", grid64, Y0)
    from driftflux.solver import solve_linear_state
    exact = solve_linear_state(st0, 0.5, consts).pack()
    errs = []
    for n in (25, 50):
        Y = Y0
        for i in range(n):
            Y = rk4_arrays(Y, rhs, 0.5 / n)
        errs.append(np.max(np.abs(Y - exact)))
    assert 14 < errs[0] / errs[1] < 18


# ------------------------------------------------------------ runner

def test_equilibrium_run_stays_at_rest(grid64, consts):
    res = run_simulation(State.equilibrium(grid64, consts), SolverConfig(t_end=1.0), consts)
    assert np.max(np.abs(res.final.pack())) <= 1e-10
    for r in res.records:
        assert all(v <= 1e-10 for v in r.norms.values())


def test_run_is_deterministic(grid64, consts, small_state):
    cfg = SolverConfig(t_end=0.05)
    a = run_simulation(small_state, cfg, consts)
    b = run_simulation(small_state, cfg, consts)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]
    assert np.array_equal(a.final.pack(), b.final.pack())


def test_auto_dt_is_stride_multiple(grid64, consts, small_state):
    cfg = SolverConfig(t_end=0.1, snapshot_stride=7)
    rhs = SpectralRHS(grid64, cfg, consts)
    dt, n = choose_dt(rhs, small_state.pack(), cfg)
    assert n % 7 == 0 and dt * n == pytest.approx(0.1) and dt <= rhs.stable_dt(small_state.pack())


def test_fixed_dt_must_divide_horizon(grid64, consts, small_state):
    with pytest.raises(ConfigError):
        run_simulation(small_state, SolverConfig(t_end=0.1, dt=0.03), consts)


def test_oversized_dt_raises_stability_fault(grid64, consts, small_state):
    with pytest.raises(StabilityFault) as exc:
        run_simulation(small_state, SolverConfig(t_end=1.0, dt=0.5), consts)
    assert exc.value.result.steps == 0


def test_config_validation():
    for bad in (dict(dt=-1.0), dict(t_end=0.0), dict(ell=0.5), dict(chart="physical"),
                dict(snapshot_stride=0), dict(cfl_viscous=0.0)):
        with pytest.raises(ConfigError):
            SolverConfig(**bad)


def test_outer_projection_matches_reduced_form(grid64, consts, small_state):
    base = SolverConfig(ell=6, t_end=0.02, dt=0.002)
    a = run_simulation(small_state, base, consts)
    b = run_simulation(small_state, dataclasses.replace(base, outer_projection=True), consts)
    scale = np.max(np.abs(a.final.pack()))
    assert np.max(np.abs(a.final.pack() - b.final.pack())) <= 1e-12 * scale


def test_friedrichs_full_radius_is_identity(grid64, consts, small_state):
    cfg = SolverConfig(t_end=0.02, dt=0.001)
    a = run_simulation(small_state, cfg, consts)
    b = run_simulation(small_state, dataclasses.replace(cfg, ell=64.0), consts)
    diff = np.sqrt(np.sum((a.final.pack() - b.final.pack()) ** 2))
    assert diff <= 1e-6 * np.sqrt(np.sum(a.final.pack() ** 2))


def test_strict_mean_mode_removes_mean(grid64, consts, small_state):
    shifted = State("global_modified", small_state.first + 0.01, small_state.second, small_state.u)
    res = run_simulation(shifted, SolverConfig(t_end=0.01, dt=0.001, keep_mean=False), consts)
    assert abs(res.final.first.mean()) < 1e-16
