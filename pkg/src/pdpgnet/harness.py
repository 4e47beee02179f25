"""Experiment configuration, orchestration and CSV artifacts."""
from __future__ import annotations

import copy
import csv
import functools
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import CellularEnv, EnvConfig
from .errors import ComparisonError, ConfigError, SchemaError
from .mobility import MobilityConfig
from .pdpg import Agent, PdpgConfig, scalarize_mode, substream, train_loop
from .radio import RadioConfig
from .rsrp_map import MapGenConfig, TiltDictionary, generate_map, load_map
from .static_opt import (exact_enumerate, heuristic_fair_lambda, heuristic_small_lambda, periodic_static_policy,
                         tilt_combos)

CSV_SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "PDPGNET_OUTPUT_DIR"

RL_KINDS = ("pdpg", "ddpg-throughput", "ddpg-load", "ddpg-combined", "ddpg-combined3")
STATIC_KINDS = ("static-1", "static-2", "static-3", "static-exact")

DEFAULTS = {
    "scenario": {
        "bs_positions": [[100.0, 100.0], [300.0, 100.0], [100.0, 300.0], [300.0, 300.0]],
        "num_users": 40,
        "area_m": [400.0, 400.0],
        "seed": 0,
    },
    "map": {
        "path": None,
        "tilt_count": 11,
        "tilt_elevation_range": [2.0, 22.0],
        "gen": {"grid_spacing_m": 5.0, "shadowing_sigma_db": 4.0},
    },
    "mobility": {"model": "rwp"},
    "radio": {},
    "env": {"action_period_ticks": 8, "reward_dims": 2},
    "agent": {
        "kind": "pdpg",
        "pdpg": {},
        # scalar baselines: dot product of these with the reward vector
        "scalar_weights": None,
        "static": {"w": 0.5, "lambda": 1.0, "repetitions": 16, "num_combos": 32, "period_ticks": 8, "phi": None},
    },
    "horizon_days": 200.0,
    "sample_interval_minutes": 15.0,
    "moving_average": 96,
    "tick_log": False,
    "output_dir": "runs/default",
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict  # fully resolved tree, echoed next to every run

    @classmethod
    def from_dict(cls, d, seed=None, output_dir=None):
        raw = _merge(DEFAULTS, d)
        if seed is not None:
            raw["scenario"]["seed"] = int(seed)
        env_out = os.environ.get(OUTPUT_DIR_ENV)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        elif env_out:
            raw["output_dir"] = env_out
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, seed=None, output_dir=None):
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
        return cls.from_dict(d, seed, output_dir)

    # resolved sub-configs ----------------------------------------------------
    @property
    def seed(self):
        return int(self.raw["scenario"]["seed"])

    @property
    def kind(self):
        return self.raw["agent"]["kind"]

    @property
    def is_rl(self):
        return self.kind in RL_KINDS

    @property
    def num_cells(self):
        return len(self.raw["scenario"]["bs_positions"])

    @property
    def ticks(self):
        return int(round(self.raw["horizon_days"] * 24 * 60 / self.raw["sample_interval_minutes"]))

    def env_config(self):
        return EnvConfig(**self.raw["env"])

    def radio_config(self):
        return RadioConfig.from_dict(self.raw["radio"])

    def mobility_config(self):
        d = dict(self.raw["mobility"])
        d.setdefault("num_users", self.raw["scenario"]["num_users"])
        d.setdefault("area_m", self.raw["scenario"]["area_m"])
        d["tick_seconds"] = 60.0 * self.raw["sample_interval_minutes"]
        return MobilityConfig.from_dict(d)

    def map_gen_config(self):
        d = dict(self.raw["map"]["gen"])
        d.setdefault("area_m", self.raw["scenario"]["area_m"])
        d.setdefault("rng_seed", int(substream(self.seed, "map").integers(2**31)))
        return MapGenConfig.from_dict(d)

    def tilts(self):
        m = self.raw["map"]
        return TiltDictionary.default(int(m["tilt_count"]), tuple(m["tilt_elevation_range"]))

    def agent_config(self) -> PdpgConfig:
        a = self.raw["agent"]
        base = PdpgConfig.from_dict(a["pdpg"])
        dims = self.raw["env"]["reward_dims"]
        kind = self.kind
        if kind == "pdpg":
            return base
        defaults = {
            "ddpg-throughput": [1.0, 0.0],
            "ddpg-load": [0.0, 1.0],
            "ddpg-combined": list(base.weights[:2]) if len(base.weights) == 2 else [0.5, 0.5],
            "ddpg-combined3": [1 / 3, 1 / 3, 1 / 3],
        }
        w = a["scalar_weights"] if a["scalar_weights"] is not None else defaults[kind]
        if len(w) < dims:
            w = list(w) + [0.0] * (dims - len(w))
        return scalarize_mode(w, base)

    def validate(self):
        raw = self.raw
        if self.kind not in RL_KINDS + STATIC_KINDS:
            raise ConfigError(f"unknown agent kind {self.kind!r}; expected one of {RL_KINDS + STATIC_KINDS}")
        if raw["horizon_days"] <= 0 or raw["sample_interval_minutes"] <= 0:
            raise ConfigError("horizon_days and sample_interval_minutes must be positive")
        env = self.env_config()
        if self.ticks < env.action_period_ticks:
            raise ConfigError(f"horizon of {self.ticks} ticks is shorter than one action period")
        self.radio_config()
        self.mobility_config()
        if self.is_rl:
            ac = self.agent_config()
            need = ac.reward_dims_required()
            if need != env.reward_dims:
                raise ConfigError(f"agent {self.kind!r} expects a {need}-dim reward but env.reward_dims="
                                  f"{env.reward_dims}")
        if self.kind == "ddpg-combined3" and env.reward_dims != 3:
            raise ConfigError("ddpg-combined3 needs env.reward_dims = 3")

    def echo(self):
        out = copy.deepcopy(self.raw)
        out["resolved"] = {
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "ticks": self.ticks,
            "map_rng_seed": self.map_gen_config().rng_seed,
            "mobility_seed": mobility_seed(self.seed),
            "agent": self.agent_config().to_dict() if self.is_rl else None,
        }
        return out


def mobility_seed(master):
    return int(substream(master, "mobility").integers(2**63))


def build_env(cfg: ExperimentConfig):
    m = cfg.raw["map"]
    if m.get("path"):
        tensor = load_map(m["path"])
        if tensor.num_bs != cfg.num_cells:
            raise SchemaError(f"map {m['path']} has {tensor.num_bs} BSs, scenario has {cfg.num_cells}")
    else:
        tensor = generate_map(cfg.map_gen_config(), cfg.tilts(), cfg.raw["scenario"]["bs_positions"])
    return CellularEnv(cfg.env_config(), tensor, cfg.radio_config(), cfg.mobility_config())


# --- artifacts ------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def moving_average(x, window):
    x = np.asarray(x, dtype=float)
    if window <= 1 or len(x) == 0:
        return x.copy()
    # trailing window, shortened at the start of the series
    c = np.cumsum(np.insert(x, 0, 0.0))
    hi = np.arange(1, len(x) + 1)
    lo = np.maximum(0, hi - window)
    return (c[hi] - c[lo]) / (hi - lo)


class ArtifactWriter:
    def __init__(self, out_dir, window):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.window = window

    def write_samples(self, ticks, throughput, loads):
        """throughput.csv (network, normalised) and cell_load.csv (per cell, normalised)."""
        throughput = np.asarray(throughput, dtype=float)
        loads = np.asarray(loads, dtype=float)
        peak = loads.max(axis=1) if len(loads) else np.zeros(0)
        ma_t, ma_p = moving_average(throughput, self.window), moving_average(peak, self.window)
        with open(self.dir / "throughput.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["tick", "throughput", "peak_load", "throughput_ma", "peak_load_ma"])
            for row in zip(ticks, throughput, peak, ma_t, ma_p):
                w.writerow([int(row[0]), *map(_fmt, row[1:])])
        with open(self.dir / "cell_load.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["tick", "cell", "load"])
            for t, row in zip(ticks, loads):
                for n, v in enumerate(row):
                    w.writerow([int(t), n, _fmt(v)])

    def write_rows(self, name, rows):
        if not rows:
            return
        keys = list(rows[0].keys())
        with open(self.dir / name, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(keys)
            for r in rows:
                w.writerow([r[k] if isinstance(r[k], (int, np.integer, str)) else _fmt(r[k]) for k in keys])

    def write_json(self, name, obj):
        (self.dir / name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


@dataclass
class RunArtifacts:
    out_dir: Path
    throughput: np.ndarray
    loads: np.ndarray  # (ticks, N) normalised
    convergence: list
    config_echo: dict
    checkpoint: Path | None = None

    @property
    def peak_loads(self):
        return self.loads.max(axis=1)

    def objective(self, w=(0.5, 0.5)):
        """Per-tick w1 * throughput + w2 * (1 - peak load): the scalarised objective
        shifted by the constant w2 so that it is positive."""
        return w[0] * self.throughput + w[1] * (1.0 - self.peak_loads)


def _static_solver(cfg: ExperimentConfig):
    s = cfg.raw["agent"]["static"]
    kind = cfg.kind
    coin = substream(cfg.seed, "heuristic-coin")
    phi = s.get("phi")
    if kind == "static-2":
        return functools.partial(heuristic_small_lambda, phi=phi), int(s["period_ticks"])
    if kind == "static-exact":
        return functools.partial(exact_enumerate, lam=float(s["lambda"]), phi=phi), 1
    solver = functools.partial(heuristic_fair_lambda, w=float(s["w"]), rng=coin,
                               repetitions=int(s["repetitions"]), phi=phi)
    # static-1 re-tilts on the RL period, static-3 every sample
    return solver, (int(s["period_ticks"]) if kind == "static-1" else 1)


def run_experiment(cfg: ExperimentConfig, out_dir=None, checkpoint=None) -> RunArtifacts:
    """Run the configured policy over the horizon and write CSV artifacts.

    ``checkpoint`` evaluates a trained agent (frozen, noise-free) instead of
    training one.
    """
    out = Path(out_dir or cfg.raw["output_dir"])
    writer = ArtifactWriter(out, int(cfg.raw["moving_average"]))
    env = build_env(cfg)
    env.reset(mobility_seed(cfg.seed))
    if cfg.raw.get("tick_log"):
        env.open_tick_log(out / "tick_log.csv")
    t0 = time.perf_counter()
    ckpt_path = None
    try:
        if cfg.is_rl or checkpoint is not None:
            periods = cfg.ticks // env.cfg.action_period_ticks
            if checkpoint is not None:
                agent, meta = Agent.load(checkpoint, cfg.seed)
                if meta["state_dim"] != env.state_dim or meta["action_dim"] != env.action_dim:
                    raise SchemaError(
                        f"checkpoint built for N={meta.get('num_cells', meta['state_dim'] // 2)} cells "
                        f"(state_dim={meta['state_dim']}, action_dim={meta['action_dim']}) but scenario has "
                        f"N={env.num_cells} (state_dim={env.state_dim}, action_dim={env.action_dim})")
                log = train_loop(env, agent, periods, learn=False, noise=False)
            else:
                agent = Agent(env.state_dim, env.action_dim, cfg.agent_config(), cfg.seed)
                log = train_loop(env, agent, periods)
                ckpt_path = out / "checkpoint.bin"
                agent.save(ckpt_path, num_cells=env.num_cells, kind=cfg.kind)
            ticks = [r[0] for r in log.tick_rows]
            thr = np.array([r[1] for r in log.tick_rows])
            loads = np.array([r[2] for r in log.tick_rows])
            conv = log.rows
            smooth = moving_average([r["scalar_reward"] for r in conv], int(cfg.raw["moving_average"]))
            for row, ma in zip(conv, smooth):
                row["scalar_reward_ma"] = ma
            writer.write_rows("convergence.csv", conv)
        else:
            solver, period = _static_solver(cfg)
            s = cfg.raw["agent"]["static"]
            combos = tilt_combos(env.num_tilts, env.num_cells, int(s["num_combos"]),
                                 substream(cfg.seed, "static-combos"))
            rows = periodic_static_policy(env, solver, period, cfg.ticks, combos)
            ticks = [r["tick"] for r in rows]
            thr = np.array([r["throughput_mbps"].sum() / env.cfg.throughput_scale_mbps for r in rows])
            loads = np.array([r["load_prb"] / env.radio.cell_prb_budget for r in rows])
            conv = []
            stats = [{"tick": r["tick"], "candidates": int(r["solver_stats"].get("candidates", 0)),
                      "greedy_draws": int(r["solver_stats"].get("greedy", 0)),
                      "draws": int(r["solver_stats"].get("draws", 0))} for r in rows]
            writer.write_rows("solver_stats.csv", stats)
    finally:
        env.close_tick_log()
    writer.write_samples(ticks, thr, loads)
    echo = cfg.echo()
    echo["resolved"]["output_dir"] = str(out)
    writer.write_json("config.json", echo)
    writer.write_json("run_info.json", {"wall_time_s": time.perf_counter() - t0})
    return RunArtifacts(out, thr, loads, conv, echo, ckpt_path)


# --- comparison -----------------------------------------------------------------

def load_artifacts(run_dir) -> RunArtifacts:
    d = Path(run_dir)
    if not (d / "config.json").is_file():
        raise ComparisonError(f"{d} is not a run directory (no config.json)")
    echo = json.loads((d / "config.json").read_text())
    t = np.genfromtxt(d / "throughput.csv", delimiter=",", names=True, ndmin=1)
    cl = np.loadtxt(d / "cell_load.csv", delimiter=",", skiprows=1, ndmin=2)
    n = int(cl[:, 1].max()) + 1
    loads = cl[:, 2].reshape(-1, n)
    conv = []
    if (d / "convergence.csv").is_file():
        with open(d / "convergence.csv", newline="") as f:
            conv = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(f)]
    return RunArtifacts(d, np.atleast_1d(t["throughput"]), loads, conv, echo)


def empirical_cdf(samples):
    x = np.sort(np.asarray(samples, dtype=float))
    return x, np.arange(1, len(x) + 1) / len(x)


def summarize(run: RunArtifacts, final_fraction=0.1):
    thr = run.throughput
    out = {
        "run": str(run.out_dir),
        "throughput_p10": float(np.quantile(thr, 0.1)),
        "throughput_p50": float(np.quantile(thr, 0.5)),
        "throughput_p90": float(np.quantile(thr, 0.9)),
        "throughput_mean": float(thr.mean()),
        "mean_peak_load": float(run.peak_loads.mean()),
        "load_std": float(run.loads.std()),
    }
    if run.convergence:
        r = np.array([row["scalar_reward"] for row in run.convergence])
        tail = r[-max(1, int(len(r) * final_fraction)):]
        out["final_reward_mean"] = float(tail.mean())
        out["final_reward_std"] = float(tail.std())
    return out


def compare_runs(runs, out_dir=None):
    """Per-run summary rows plus deltas against the first run."""
    if not runs:
        raise ComparisonError("compare needs at least one run")
    ref = runs[0].config_echo
    for r in runs[1:]:
        e = r.config_echo
        if e["resolved"]["csv_schema_version"] != ref["resolved"]["csv_schema_version"]:
            raise ComparisonError(f"{r.out_dir}: CSV schema version differs from {runs[0].out_dir}")
        if e["sample_interval_minutes"] != ref["sample_interval_minutes"]:
            raise ComparisonError(f"{r.out_dir}: sample interval {e['sample_interval_minutes']} min differs from "
                                  f"{ref['sample_interval_minutes']} min")
    rows = [summarize(r) for r in runs]
    base = rows[0]
    for row in rows:
        for k, v in list(row.items()):
            if k != "run" and k in base and not k.startswith("delta_"):
                row[f"delta_{k}"] = v - base[k]
    if out_dir is not None:
        w = ArtifactWriter(out_dir, 1)
        keys = sorted({k for r in rows for k in r} - {"run"})
        with open(w.dir / "summary.csv", "w", newline="") as f:
            cw = csv.writer(f)
            cw.writerow(["run", *keys])
            for r in rows:
                cw.writerow([r["run"], *(_fmt(r[k]) if k in r else "" for k in keys)])
        with open(w.dir / "cdf.csv", "w", newline="") as f:
            cw = csv.writer(f)
            cw.writerow(["run", "throughput", "cdf"])
            for run in runs:
                x, p = empirical_cdf(run.throughput)
                for xi, pi in zip(x, p):
                    cw.writerow([str(run.out_dir), _fmt(xi), _fmt(pi)])
    return rows
