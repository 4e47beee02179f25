import csv

import numpy as np
import pytest

from pdpgnet.env import Action, CellularEnv, EnvConfig, State, decode_action, period_reward, scale_state
from pdpgnet.errors import ConfigError, DimensionError, StateError
from pdpgnet.mobility import MobilityConfig
from pdpgnet.radio import RadioConfig
from pdpgnet.rsrp_map import RsrpTensor, TiltDictionary


def test_decode_endpoints():
    idx, cio = decode_action(Action(np.array([-1.0, 1.0, 0.0]), np.zeros(3)), 11)
    assert idx.tolist() == [0, 10, 5]
    np.testing.assert_array_equal(cio.values, np.zeros((3, 3)))


def test_decode_cio_scaling_and_clamp():
    _, cio = decode_action(Action(np.zeros(3), np.array([0.5, -2.0, 1.0])), 5)
    assert cio.values[0, 1] == 6.0 and cio.values[1, 0] == -6.0
    assert cio.values[0, 2] == -12.0 and cio.values[1, 2] == 12.0


def test_action_vector_dimension():
    assert Action.dim(4) == 10
    with pytest.raises(DimensionError):
        Action.from_vector(np.zeros(5), 4)


def test_scale_state_endpoints():
    out = scale_state(State(np.array([0.0, 1.0]), np.array([0.5, 0.25])))
    np.testing.assert_array_equal(out, [-1.0, 1.0, 0.0, -0.5])


def test_reward_equal_loads_zero_std():
    loads = np.full((4, 3), 37.0)
    r = period_reward(loads, np.ones((4, 3)), 3, 100.0)
    assert r[2] == 0.0 and r[1] == -0.37


def test_uninitialised_env_raises(small_map):
    env = CellularEnv(EnvConfig(), small_map, RadioConfig(), MobilityConfig(num_users=3))
    with pytest.raises(StateError):
        env.step(np.zeros(env.action_dim))
    with pytest.raises(StateError):
        env.current_state()


def test_invalid_env_config():
    with pytest.raises(ConfigError):
        EnvConfig(action_period_ticks=0)
    with pytest.raises(ConfigError):
        EnvConfig(reward_dims=4)


def test_reset_contract(small_env, small_map):
    s1 = small_env.current_state()
    other = CellularEnv(small_env.cfg, small_map, small_env.radio, small_env.mobility_cfg)
    s2 = other.reset(7)
    np.testing.assert_array_equal(s1.as_array(), s2.as_array())
    assert np.all((s1.edge_ratios >= 0) & (s1.edge_ratios <= 1))
    assert np.all(small_env.tilt == 0)
    rsrp = small_map.query(small_env.mobility.positions, np.zeros(4, dtype=int))
    np.testing.assert_array_equal(small_env.serving, rsrp.argmax(axis=1))
    state, reward, _ = small_env.step(np.zeros(small_env.action_dim))
    assert np.all(np.isfinite(state.as_array())) and reward.shape == (2,)


def _run(env, seed, actions):
    env.reset(seed)
    return [env.step(a) for a in actions]


def test_step_deterministic(small_map):
    cfg = EnvConfig(action_period_ticks=3, reward_dims=3)
    acts = np.random.default_rng(0).uniform(-1, 1, size=(5, 10))
    runs = []
    for _ in range(2):
        env = CellularEnv(cfg, small_map, RadioConfig(), MobilityConfig(num_users=20, tick_seconds=120))
        runs.append(_run(env, 11, acts))
    for (s1, r1, i1), (s2, r2, i2) in zip(*runs):
        assert r1.tobytes() == r2.tobytes()
        assert s1.as_array().tobytes() == s2.as_array().tobytes()
        assert i1["loads_prb"].tobytes() == i2["loads_prb"].tobytes()


def test_reward_matches_tick_log(small_map, tmp_path):
    cfg = EnvConfig(action_period_ticks=4, reward_dims=3)
    radio = RadioConfig()
    env = CellularEnv(cfg, small_map, radio, MobilityConfig(num_users=60, tick_seconds=120))
    env.reset(3)
    env.open_tick_log(tmp_path / "ticks.csv")
    rng = np.random.default_rng(1)
    rewards, held = [], []
    for _ in range(6):
        _, r, info = env.step(rng.uniform(-1, 1, size=env.action_dim))
        rewards.append(r)
        held.append([(t["tilt"].tolist(), t["cio"].tolist()) for t in info["ticks"]])
    env.close_tick_log()

    with open(tmp_path / "ticks.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6 * 4 * 4
    load = np.array([float(r["load"]) for r in rows]).reshape(6, 4, 4)  # period, tick, cell
    tput = np.array([float(r["throughput"]) for r in rows]).reshape(6, 4, 4)
    for p in range(6):
        assert rewards[p][0] == pytest.approx(tput[p].sum() / 4 / 100.0, rel=1e-9)
        assert rewards[p][1] == pytest.approx(-(load[p].mean(axis=0) / 100.0).max(), rel=1e-9)
        x = load[p].ravel() / 100.0
        assert rewards[p][2] == pytest.approx(-np.sqrt(np.mean((x - x.mean()) ** 2)), rel=1e-9, abs=1e-15)
        # action held for exactly T ticks
        assert all(h == held[p][0] for h in held[p])


def test_single_cell_hand_trace():
    tensor = RsrpTensor(np.array([[0.0, 0.0]]), np.full((1, 1, 1), -80.0), [(0.0, 0.0)],
                        TiltDictionary([(0.0, 5.0)]))
    radio = RadioConfig(noise_dbm=-125.0)
    env = CellularEnv(EnvConfig(action_period_ticks=1), tensor, radio,
                      MobilityConfig(num_users=1, area_m=(1.0, 1.0)))
    env.reset(0)
    _, reward, _ = env.step(np.zeros(1))
    # SINR = 45 dB, above the top CQI threshold: 5.5547 Mbps/PRB
    r = 5.5547
    l = min(1.0 / r, 6.0)
    assert reward[0] == pytest.approx(r * l / 100.0, rel=1e-9)
    assert reward[1] == pytest.approx(-l / 100.0, rel=1e-9)
