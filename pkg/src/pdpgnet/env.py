"""Periodic-control environment: one agent step holds tilt and CIOs for T ticks."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, StateError
from .mobility import Mobility, MobilityConfig
from .radio import CioMatrix, RadioConfig, a3_handover, evaluate_network
from .rsrp_map import RsrpTensor


@dataclass(frozen=True)
class EnvConfig:
    action_period_ticks: int = 8  # 2 h at 15 min per tick
    reward_dims: int = 2
    throughput_scale_mbps: float = 100.0
    cio_max_db: float = 12.0

    def __post_init__(self):
        if self.action_period_ticks < 1:
            raise ConfigError("action_period_ticks must be >= 1")
        if self.reward_dims not in (2, 3):
            raise ConfigError("reward_dims must be 2 or 3")


@dataclass
class State:
    cell_loads: np.ndarray  # L_n / cell budget
    edge_ratios: np.ndarray

    def as_array(self):
        return np.concatenate([self.cell_loads, self.edge_ratios])


@dataclass
class Action:
    tilt_raw: np.ndarray  # (N,)
    cio_raw: np.ndarray  # (N(N-1)/2,) upper triangle, row-major

    @staticmethod
    def dim(n):
        return n + n * (n - 1) // 2

    @classmethod
    def from_vector(cls, vec, n):
        vec = np.clip(np.asarray(vec, dtype=float), -1.0, 1.0)
        if vec.shape != (cls.dim(n),):
            raise DimensionError(f"action for {n} cells has {cls.dim(n)} entries, got {vec.shape}")
        return cls(vec[:n].copy(), vec[n:].copy())

    def as_array(self):
        return np.concatenate([self.tilt_raw, self.cio_raw])


def decode_action(action: Action, num_tilts: int, cio_max_db: float = 12.0):
    """Quantise the tilt part to dictionary indices and scale the CIO part to dB."""
    t = np.clip(np.asarray(action.tilt_raw, dtype=float), -1.0, 1.0)
    c = np.clip(np.asarray(action.cio_raw, dtype=float), -1.0, 1.0)
    # round half up so that raw 0 with M = 11 gives exactly 5
    idx = np.floor((t + 1.0) / 2.0 * (num_tilts - 1) + 0.5).astype(np.intp)
    idx = np.clip(idx, 0, num_tilts - 1)
    return idx, CioMatrix.from_upper(c * cio_max_db, len(t), bounds=(-cio_max_db, cio_max_db))


def scale_state(state: State):
    """Affine map of budget-normalised loads and edge ratios from [0, 1] to [-1, 1]."""
    return 2.0 * np.asarray(state.as_array() if isinstance(state, State) else state, dtype=float) - 1.0


def period_reward(loads_prb, tput_mbps, reward_dims, budget, tput_scale=100.0):
    """Vector reward over one action period from (T, N) tick logs.

    [mean network throughput / tput_scale, -max_n mean_t load_n / budget,
     optionally -population std of all N*T normalised loads].
    """
    loads = np.asarray(loads_prb, dtype=float)
    tput = np.asarray(tput_mbps, dtype=float)
    r = [tput.sum(axis=1).mean() / tput_scale, -loads.mean(axis=0).max() / budget]
    if reward_dims == 3:
        r.append(-loads.std() / budget)
    return np.array(r)


class CellularEnv:
    def __init__(self, cfg: EnvConfig, tensor: RsrpTensor, radio: RadioConfig, mobility: MobilityConfig):
        self.cfg = cfg
        self.tensor = tensor
        self.radio = radio
        self.mobility_cfg = mobility
        self.num_cells = tensor.num_bs
        self.num_users = mobility.num_users
        self.num_tilts = tensor.num_tilts
        self.mobility = None
        self.snapshot = None
        self.tick = 0
        self.tick_log_writer = None

    @property
    def state_dim(self):
        return 2 * self.num_cells

    @property
    def action_dim(self):
        return Action.dim(self.num_cells)

    def reset(self, seed) -> State:
        self.mobility = Mobility(self.mobility_cfg, seed)
        self.tick = 0
        self.tilt = np.zeros(self.num_cells, dtype=np.intp)
        self.cio = CioMatrix.zeros(self.num_cells)
        rsrp = self.tensor.query(self.mobility.positions, self.tilt)
        self.serving = rsrp.argmax(axis=1)
        self.snapshot = evaluate_network(rsrp, self.serving, self.radio)
        return self.current_state()

    def current_state(self) -> State:
        snap = self._require_snapshot()
        return State(snap.cell_load_prb / self.radio.cell_prb_budget, snap.edge_ratios())

    def _require_snapshot(self):
        if self.snapshot is None:
            raise StateError("environment not initialised; call reset() first")
        return self.snapshot

    def move_users(self):
        self._require_snapshot()
        self.tick += 1
        return self.mobility.step()

    def run_tick(self):
        """Advance mobility one tick, run A3 under the held tilt/CIO, schedule."""
        pos = self.move_users()
        rsrp = self.tensor.query(pos, self.tilt)
        before = self.serving
        self.serving, moved = a3_handover(rsrp, before, self.cio, self.radio.hysteresis_db)
        self.snapshot = evaluate_network(rsrp, self.serving, self.radio)
        return self._record(np.bincount(before[moved], minlength=self.num_cells))

    def apply_direct(self, tilt, serving):
        """Impose tilt and association on the current positions (static benchmarks only)."""
        self.tilt = np.asarray(tilt, dtype=np.intp)
        rsrp = self.tensor.query(self.mobility.positions, self.tilt)
        new = np.asarray(serving, dtype=np.intp)
        changed = new != self.serving
        ho = np.bincount(self.serving[changed], minlength=self.num_cells)
        self.serving = new
        self.snapshot = evaluate_network(rsrp, self.serving, self.radio)
        return self._record(ho)

    def _record(self, handovers):
        s = self.snapshot
        edges = np.bincount(s.serving, weights=s.edge_flags.astype(float), minlength=self.num_cells)
        rec = {
            "tick": self.tick,
            "load_prb": s.cell_load_prb.copy(),
            "throughput_mbps": s.cell_throughput_mbps.copy(),
            "handovers": handovers,
            "edge_count": edges.astype(int),
            "tilt": self.tilt.copy(),
            "cio": self.cio.values.copy(),
        }
        if self.tick_log_writer is not None:
            for n in range(self.num_cells):
                self.tick_log_writer.writerow([self.tick, n, repr(float(s.cell_load_prb[n])),
                                               repr(float(s.cell_throughput_mbps[n])),
                                               int(handovers[n]), int(edges[n])])
        return rec

    def open_tick_log(self, path):
        f = open(path, "w", newline="")
        self.tick_log_writer = csv.writer(f)
        self.tick_log_writer.writerow(["tick", "cell", "load", "throughput", "handovers", "edge_count"])
        self._tick_log_file = f

    def close_tick_log(self):
        if self.tick_log_writer is not None:
            self._tick_log_file.close()
            self.tick_log_writer = None

    def step(self, action):
        """Hold the decoded action for T ticks; return (State, reward vector, info)."""
        self._require_snapshot()
        if not isinstance(action, Action):
            action = Action.from_vector(action, self.num_cells)
        self.tilt, self.cio = decode_action(action, self.num_tilts, self.cfg.cio_max_db)
        ticks = [self.run_tick() for _ in range(self.cfg.action_period_ticks)]
        loads = np.array([r["load_prb"] for r in ticks])
        tput = np.array([r["throughput_mbps"] for r in ticks])
        reward = period_reward(loads, tput, self.cfg.reward_dims, self.radio.cell_prb_budget,
                               self.cfg.throughput_scale_mbps)
        info = {
            "ticks": ticks,
            "loads_prb": loads,
            "throughput_mbps": tput,
            "tilt": self.tilt.copy(),
            "cio": self.cio.values.copy(),
        }
        return self.current_state(), reward, info
