import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from driftflux.lp_besov import Grid, SpectralField
from driftflux.model import derive_constants, reference_params

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid64():
    return Grid(2, 64)


@pytest.fixture(scope="session")
def grid16():
    return Grid(2, 16)


@pytest.fixture(scope="session")
def params():
    return reference_params(2)


@pytest.fixture(scope="session")
def consts(params):
    return derive_constants(params)


def cos_field(grid, kx=1, ky=0):
    return SpectralField.from_function(grid, lambda x, y: np.cos(kx * x + ky * y))


def smooth_random(grid, rng, band=(1.0, 4.0), amp=1.0, vector=False):
    from driftflux.initial_data import random_shell_field
    f = random_shell_field(grid, band, rng, vector=vector)
    return f * (amp / f.sup_norm())


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def finite(x):
    return math.isfinite(x)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
