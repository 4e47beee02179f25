"""User mobility: Random Waypoint and a cluster-confined SLAW simplification."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

RWP = "rwp"
SLAW = "slaw"


@dataclass(frozen=True)
class MobilityConfig:
    model: str = RWP
    num_users: int = 80
    area_m: tuple = (400.0, 400.0)
    tick_seconds: float = 900.0
    rwp_speed_range: tuple = (0.5, 1.5)  # m/s
    rwp_pause_range: tuple = (0, 4)  # ticks
    slaw_num_clusters: int = 4
    slaw_cluster_radius_m: float = 60.0
    slaw_switch_prob: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.model not in (RWP, SLAW):
            raise ConfigError(f"unknown mobility model {self.model!r}")
        if self.num_users <= 0:
            raise ConfigError("num_users must be positive")
        lo, hi = self.rwp_speed_range
        if lo < 0 or hi < lo:
            raise ConfigError("rwp_speed_range must be non-negative and ordered")
        lo, hi = self.rwp_pause_range
        if lo < 0 or hi < lo:
            raise ConfigError("rwp_pause_range must be non-negative and ordered")
        if not 0.0 <= self.slaw_switch_prob <= 1.0:
            raise ConfigError("slaw_switch_prob must lie in [0, 1]")
        if self.slaw_num_clusters < 1 or self.slaw_cluster_radius_m <= 0:
            raise ConfigError("SLAW needs >= 1 cluster with positive radius")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("area_m", "rwp_speed_range", "rwp_pause_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class MobilityState:
    positions: np.ndarray  # (K, 2)
    waypoints: np.ndarray  # (K, 2)
    speeds: np.ndarray  # (K,)
    pause: np.ndarray  # remaining pause ticks
    cluster: np.ndarray = None  # SLAW: cluster each user currently belongs to
    target_cluster: np.ndarray = None  # SLAW: -1 unless travelling between clusters
    centers: np.ndarray = None  # SLAW cluster centres
    completions: np.ndarray = None  # SLAW: inter-cluster trips finished, per user

    def copy(self):
        return MobilityState(**{k: (None if v is None else v.copy()) for k, v in vars(self).items()})


@dataclass
class UserTrace:
    positions: np.ndarray  # (ticks, K, 2)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["tick", "user", "x", "y"])
            for t, frame in enumerate(self.positions):
                for k, (x, y) in enumerate(frame):
                    w.writerow([t, k, repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        ticks = int(rows[:, 0].max()) + 1
        users = int(rows[:, 1].max()) + 1
        pos = np.zeros((ticks, users, 2))
        pos[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2:4]
        return cls(pos)


def _uniform_in_area(rng, n, area):
    return rng.uniform(0.0, 1.0, size=(n, 2)) * np.asarray(area, dtype=float)


def _uniform_in_disks(rng, centers, radius, area):
    """Uniform points in disk(centre, radius) intersected with the area (rejection)."""
    w, h = area
    out = np.empty((len(centers), 2))
    todo = np.arange(len(centers))
    while len(todo):
        r = radius * np.sqrt(rng.uniform(size=len(todo)))
        phi = rng.uniform(0.0, 2 * np.pi, size=len(todo))
        pts = centers[todo] + np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        ok = (pts[:, 0] >= 0) & (pts[:, 0] <= w) & (pts[:, 1] >= 0) & (pts[:, 1] <= h)
        out[todo[ok]] = pts[ok]
        todo = todo[~ok]
    return out


def _speeds(rng, n, cfg):
    lo, hi = cfg.rwp_speed_range
    return rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, float(lo))


def _pauses(rng, n, cfg):
    lo, hi = cfg.rwp_pause_range
    return rng.integers(lo, hi + 1, size=n)


def _advance(state, moving, dt):
    """Move ``moving`` users toward their waypoint; returns the mask of arrivals."""
    delta = state.waypoints - state.positions
    dist = np.hypot(delta[:, 0], delta[:, 1])
    step = state.speeds * dt
    arrive = moving & (step >= dist)
    go = moving & ~arrive & (dist > 0)
    frac = np.divide(step, dist, out=np.zeros_like(dist), where=dist > 0)
    state.positions[go] += delta[go] * frac[go, None]
    state.positions[arrive] = state.waypoints[arrive]
    return arrive


def init_state(cfg: MobilityConfig, rng) -> MobilityState:
    k = cfg.num_users
    area = np.asarray(cfg.area_m, dtype=float)
    if cfg.model == RWP:
        return MobilityState(
            positions=_uniform_in_area(rng, k, area),
            waypoints=_uniform_in_area(rng, k, area),
            speeds=_speeds(rng, k, cfg),
            pause=np.zeros(k, dtype=np.int64),
        )
    r = cfg.slaw_cluster_radius_m
    lo = np.minimum(r, area / 2)
    centers = lo + rng.uniform(size=(cfg.slaw_num_clusters, 2)) * (area - 2 * lo)
    cluster = rng.integers(0, cfg.slaw_num_clusters, size=k)
    return MobilityState(
        positions=_uniform_in_disks(rng, centers[cluster], r, area),
        waypoints=_uniform_in_disks(rng, centers[cluster], r, area),
        speeds=_speeds(rng, k, cfg),
        pause=np.zeros(k, dtype=np.int64),
        cluster=cluster,
        target_cluster=np.full(k, -1),
        centers=centers,
        completions=np.zeros(k, dtype=np.int64),
    )


def step_rwp(state: MobilityState, cfg: MobilityConfig, rng) -> np.ndarray:
    """One tick of Random Waypoint; mutates ``state`` and returns the new positions."""
    paused = state.pause > 0
    state.pause[paused] -= 1
    arrive = _advance(state, ~paused, cfg.tick_seconds)
    n = int(arrive.sum())
    if n:
        state.pause[arrive] = _pauses(rng, n, cfg)
        state.waypoints[arrive] = _uniform_in_area(rng, n, cfg.area_m)
        state.speeds[arrive] = _speeds(rng, n, cfg)
    np.clip(state.positions, 0.0, np.asarray(cfg.area_m, dtype=float), out=state.positions)
    return state.positions


def step_slaw(state: MobilityState, cfg: MobilityConfig, rng) -> np.ndarray:
    """One tick of the cluster walk.

    Users roam inside their cluster disk with RWP legs. A user that is neither
    paused nor already travelling retargets, with ``slaw_switch_prob``, a
    uniformly chosen other cluster and walks there; its cluster label changes
    on arrival.
    """
    area = np.asarray(cfg.area_m, dtype=float)
    r = cfg.slaw_cluster_radius_m
    nc = len(state.centers)
    paused = state.pause > 0
    state.pause[paused] -= 1

    free = ~paused & (state.target_cluster < 0)
    coin = rng.uniform(size=len(free))
    switch = free & (coin < cfg.slaw_switch_prob) if nc > 1 else np.zeros_like(free)
    n = int(switch.sum())
    if n:
        # uniform over the other clusters
        new = (state.cluster[switch] + rng.integers(1, nc, size=n)) % nc
        state.target_cluster[switch] = new
        state.waypoints[switch] = _uniform_in_disks(rng, state.centers[new], r, area)

    arrive = _advance(state, ~paused, cfg.tick_seconds)
    trip_done = arrive & (state.target_cluster >= 0)
    if trip_done.any():
        state.cluster[trip_done] = state.target_cluster[trip_done]
        state.target_cluster[trip_done] = -1
        state.completions[trip_done] += 1
    n = int(arrive.sum())
    if n:
        state.pause[arrive] = _pauses(rng, n, cfg)
        state.waypoints[arrive] = _uniform_in_disks(rng, state.centers[state.cluster[arrive]], r, area)
        state.speeds[arrive] = _speeds(rng, n, cfg)
    np.clip(state.positions, 0.0, area, out=state.positions)
    return state.positions


class Mobility:
    """Stateful wrapper owning one trace's state and random stream."""

    def __init__(self, cfg: MobilityConfig, seed=None):
        self.cfg = cfg
        self.reset(cfg.rng_seed if seed is None else seed)

    def reset(self, seed):
        self.rng = np.random.default_rng(seed)
        self.state = init_state(self.cfg, self.rng)
        return self.state.positions.copy()

    @property
    def positions(self):
        return self.state.positions

    def step(self):
        kernel = step_rwp if self.cfg.model == RWP else step_slaw
        return kernel(self.state, self.cfg, self.rng).copy()


def generate_trace(cfg: MobilityConfig, ticks: int, seed=None) -> UserTrace:
    """Positions at ticks 0..ticks-1 (tick 0 is the initial placement)."""
    mob = Mobility(cfg, seed)
    out = np.empty((ticks, cfg.num_users, 2))
    out[0] = mob.positions
    for t in range(1, ticks):
        out[t] = mob.step()
    return UserTrace(out)


def with_users(cfg: MobilityConfig, k: int) -> MobilityConfig:
    return replace(cfg, num_users=k)
