import sys

import numpy as np
import pytest

from pdpgnet.env import CellularEnv, EnvConfig
from pdpgnet.mobility import MobilityConfig
from pdpgnet.radio import RadioConfig
from pdpgnet.rsrp_map import MapGenConfig, TiltDictionary, generate_map

BS4 = [(100.0, 100.0), (300.0, 100.0), (100.0, 300.0), (300.0, 300.0)]


@pytest.fixture(scope="session")
def small_map():
    cfg = MapGenConfig(grid_spacing_m=20.0, shadowing_sigma_db=4.0, rng_seed=3)
    return generate_map(cfg, TiltDictionary.default(5), BS4)


@pytest.fixture
def small_env(small_map):
    env = CellularEnv(EnvConfig(action_period_ticks=2), small_map, RadioConfig(), MobilityConfig(num_users=12))
    env.reset(7)
    return env


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
