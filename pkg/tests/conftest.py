import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from windfarm_dmpc.linear_model import (linearization_point, realize_state_space,
                                        to_velocity_form)
from windfarm_dmpc.plant import PlantParams
from windfarm_dmpc.topology import build_layout, compute_delays, interaction_sets

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TABLE_10T = dict(M=2, N=5, dx_r=630, dy_r=378, D_r=90, V_inf=7.5, rho=1.2, h=1)
TABLE_64T = dict(M=8, N=8, dx_r=630, dy_r=378, D_r=90, V_inf=7.5, rho=1.2, h=1)


def desk_row(n=3, gap_samples=4):
    """One row of ``n`` turbines with a short integer wake delay per gap."""
    return build_layout(dict(M=1, N=n, dx_r=630, dy_r=378, D_r=90, V_inf=7.5, rho=1.2,
                             h=630 / (7.5 * gap_samples)))


def row_setup(n=3, g=4, H=20, constants=None):
    """Velocity-form models (MW outputs) and horizon sets of a single row."""
    layout = desk_row(n, gap_samples=g)
    delays = compute_delays(layout)
    point = linearization_point(layout, PlantParams(), 0.6)
    models = realize_state_space(layout, delays, point, constants, power_unit=1e6)
    vm = [to_velocity_form(m) for m in models]
    sets = interaction_sets(layout, delays, H)
    return vm, sets


@pytest.fixture
def layout_10t():
    return build_layout(TABLE_10T)


@pytest.fixture
def layout_single():
    return build_layout(dict(M=1, N=1, dx_r=630, D_r=90, V_inf=7.5, rho=1.2, h=1))


@pytest.fixture
def params():
    return PlantParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
