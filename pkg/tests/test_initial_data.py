import numpy as np
import pytest
from hypothesis import given, strategies as st

from driftflux.config import load_scenario, parse_scenario
from driftflux.errors import ConfigError, ParameterError, RecipeError
from driftflux.initial_data import (Recipe, compressive_state, default_specs, load_state_snapshot,
                                    make_initial_data, random_shell_field, save_state_snapshot)
from driftflux.lp_besov import Grid, hybrid_besov_norm, ops
from driftflux.model import derive_constants, reference_params


# ------------------------------------------------------------ recipes

def test_same_seed_is_bitwise_identical(grid64, consts):
    a = make_initial_data(Recipe(), grid64, 42, consts)
    b = make_initial_data(Recipe(), grid64, 42, consts)
    c = make_initial_data(Recipe(), grid64, 43, consts)
    assert np.array_equal(a.pack(), b.pack())
    assert not np.array_equal(a.pack(), c.pack())


@given(st.floats(1e-4, 0.05), st.integers(0, 2**63 - 1))
def test_targets_hit_exactly(E0, seed):
    g = Grid(2, 32)
    c = derive_constants(reference_params())
    st_ = make_initial_data(Recipe(target_E0=E0, band=(1.0, 6.0)), g, seed, c)
    specs = default_specs("global_modified", 2)
    for key, f in (("first", st_.first), ("second", st_.second), ("u", st_.u)):
        assert abs(hybrid_besov_norm(f, specs[key]) - E0 / 3) <= 1e-10 * E0 / 3


def test_per_field_target(grid64, consts):
    r = Recipe(targets={"second": (0.01, (0.0, 1.0))})
    st_ = make_initial_data(r, grid64, 1, consts)
    assert abs(hybrid_besov_norm(st_.second, (0.0, 1.0)) - 0.01) <= 1e-12


def test_zero_target_gives_equilibrium(grid64, consts):
    st_ = make_initial_data(Recipe(target_E0=0.0), grid64, 1, consts)
    assert np.max(np.abs(st_.pack())) == 0.0
    eq = make_initial_data(Recipe(kind="equilibrium"), grid64, 1, consts)
    assert np.max(np.abs(eq.pack())) == 0.0


def test_band_is_respected(grid64):
    f = random_shell_field(grid64, (2.0, 5.0), np.random.default_rng(0))
    k = ops(grid64).kabs
    outside = (k < 2.0) | (k > 5.0)
    assert np.max(np.abs(f.coeffs[0][outside])) < 1e-10 * np.max(np.abs(f.coeffs))


def test_recipe_rejections(grid64, consts):
    with pytest.raises(RecipeError):
        make_initial_data(Recipe(band=(1.0, 30.0)), grid64, 0, consts)
    with pytest.raises(RecipeError):
        make_initial_data(Recipe(target_E0=50.0), grid64, 0, consts)
    with pytest.raises(RecipeError):
        Recipe(kind="magic")
    with pytest.raises(RecipeError):
        Recipe(band=(3.0, 1.0))
    with pytest.raises(RecipeError):
        Recipe(target_E0=-1.0)
    with pytest.raises(RecipeError):
        make_initial_data(Recipe(band=(1.1, 1.2)), grid64, 0, consts)


def test_compressive_state(grid64):
    st_ = compressive_state(grid64, 1.0)
    x, _ = grid64.coordinates()
    assert np.allclose(st_.u.values[0], -np.sin(x)) and np.all(st_.u.values[1] == 0)
    assert st_.chart == "local_modified"


def test_snapshot_recipe_round_trip(tmp_path, grid64, consts):
    st_ = make_initial_data(Recipe(), grid64, 5, consts)
    save_state_snapshot(tmp_path / "snap", st_)
    back = make_initial_data(Recipe(kind="snapshot", snapshot=str(tmp_path / "snap")), grid64, 0, consts)
    assert np.array_equal(back.pack(), st_.pack())
    with pytest.raises(RecipeError):
        load_state_snapshot(tmp_path / "nowhere", "global_modified")
    with pytest.raises(RecipeError):
        make_initial_data(Recipe(kind="snapshot", snapshot=str(tmp_path / "snap")), Grid(2, 32), 0, consts)


# ------------------------------------------------------------- config

BASE = """
[scenario]
name = conservation
seed = 3

[params]
mu_tilde = 0.5
lambda_tilde = 0.3
a_l = 1.2
a_g = 0.8
P_l0 = 0.5
rho_l0 = 1.0
m_bar = 1.2
n_bar = 0.4
"""


def test_parse_defaults():
    sc = parse_scenario(BASE)
    assert sc.name == "conservation" and sc.seed == 3
    assert sc.params == reference_params()
    assert sc.grid == Grid(2, 64)
    assert sc.solver.chart == "global_modified" and sc.solver.dt == "auto"
    assert sc.recipe.kind == "random"


def test_parse_sections():
    text = BASE + """
[solver]
dt = 0.001
t_end = 0.5
ell = full
[initial]
band = 1, 3
target_n = 0.02
[acceptance]
tolerance = 1e-9
"""
    sc = parse_scenario(text)
    assert sc.solver.dt == 0.001 and sc.solver.ell is None and sc.solver.t_end == 0.5
    assert sc.recipe.band == (1.0, 3.0) and sc.recipe.targets == {"second": (0.02, None)}
    assert sc.acceptance == {"tolerance": 1e-9}


def test_parse_local_defaults_and_3d():
    sc = parse_scenario("[scenario]\nname = large-data-local\n[grid]\ndim = 3\n")
    assert sc.solver.chart == "local_modified" and sc.recipe.chart == "local_modified"
    assert sc.grid == Grid(3, 32)


@pytest.mark.parametrize("text,needle", [
    ("[scenario]\nname = nope\n", "nope"),
    ("[scenario]\nseed = 1\n", "name"),
    (BASE + "[bogus]\nx = 1\n", "bogus"),
    (BASE + "[solver]\nwarp = 9\n", "warp"),
    (BASE + "[solver]\nt_end = soon\n", "t_end"),
    (BASE + "[solver]\nchart = physical\n", "physical"),
    (BASE + "[grid]\nn_modes = 48\n", "grid"),
    (BASE + "[grid]\ndim = 3\n", "dim"),
    (BASE + "[initial]\nband = 1\n", "band"),
    ("[scenario]\nname = conservation\n[params]\nmu_tilde = 1\n", "missing"),
    ("not an ini file", "section"),
])
def test_parse_errors_name_the_key(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_scenario(text)


def test_parameter_violation_is_not_a_config_error():
    with pytest.raises(ParameterError):
        parse_scenario(BASE.replace("mu_tilde = 0.5", "mu_tilde = -0.5"))


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario(tmp_path / "missing.ini")


def test_echo_is_json_ready():
    import json
    sc = parse_scenario(BASE)
    json.dumps(sc.echo())


def test_dt_ladder_parsed_up_front():
    sc = parse_scenario(BASE + "[acceptance]\ndt_ladder = 0.02, 0.01 0.005\n")
    assert sc.acceptance["dt_ladder"] == (0.02, 0.01, 0.005)
    for bad in ("0.02, fast", "0.02", "0.02, -0.01"):
        with pytest.raises(ConfigError, match="dt_ladder"):
            parse_scenario(BASE + f"[acceptance]\ndt_ladder = {bad}\n")
