import json

import numpy as np
import pytest

from pdpgnet.cli import main
from pdpgnet.errors import ComparisonError, ConfigError, SchemaError
from pdpgnet.harness import (ExperimentConfig, RunArtifacts, compare_runs, empirical_cdf, load_artifacts,
                             moving_average, run_experiment)

FAST = {
    "scenario": {"num_users": 12},
    "map": {"tilt_count": 5, "gen": {"grid_spacing_m": 20.0}},
    "agent": {"pdpg": {"hidden_sizes": [8, 8], "batch_size": 4}, "static": {"num_combos": 4, "repetitions": 2}},
    "horizon_days": 1.0,
}


def _cfg(tmp_path, name, **over):
    d = json.loads(json.dumps(FAST))
    for k, v in over.items():
        if isinstance(v, dict):
            d.setdefault(k, {}).update(v)
        else:
            d[k] = v
    return ExperimentConfig.from_dict(d, output_dir=tmp_path / name)


def _write(tmp_path, name, d):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(d))
    return str(p)


def test_one_day_gives_96_samples(tmp_path):
    art = run_experiment(_cfg(tmp_path, "a"))
    assert len(art.throughput) == 96 and art.loads.shape == (96, 4)
    assert np.all(art.throughput >= 0)
    assert len(art.convergence) == 12
    back = load_artifacts(art.out_dir)
    np.testing.assert_array_equal(back.throughput, art.throughput)


@pytest.mark.parametrize("kind", ["pdpg", "static-2"])
def test_rerun_is_byte_identical(tmp_path, kind):
    a = run_experiment(_cfg(tmp_path, "a", agent={"kind": kind}))
    b = run_experiment(_cfg(tmp_path, "b", agent={"kind": kind}))
    names = sorted(p.name for p in a.out_dir.glob("*.csv"))
    assert names == sorted(p.name for p in b.out_dir.glob("*.csv")) and names
    for n in names:
        assert (a.out_dir / n).read_bytes() == (b.out_dir / n).read_bytes()


def test_config_echo_has_resolved_seeds(tmp_path):
    art = run_experiment(_cfg(tmp_path, "a"))
    echo = json.loads((art.out_dir / "config.json").read_text())
    assert echo["scenario"]["seed"] == 0
    assert {"map_rng_seed", "mobility_seed", "ticks", "agent"} <= set(echo["resolved"])
    assert echo["resolved"]["agent"]["gamma"] == 0.3
    # the echo alone reproduces the run
    again = run_experiment(ExperimentConfig.from_dict({k: v for k, v in echo.items() if k != "resolved"},
                                                      output_dir=tmp_path / "again"))
    assert (again.out_dir / "throughput.csv").read_bytes() == (art.out_dir / "throughput.csv").read_bytes()


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PDPGNET_OUTPUT_DIR", str(tmp_path / "env-out"))
    assert ExperimentConfig.from_dict(FAST).raw["output_dir"] == str(tmp_path / "env-out")


@pytest.mark.parametrize("bad", [
    {"agent": {"kind": "ppo"}},
    {"horizon_days": 0},
    {"agent": {"kind": "ddpg-combined3"}},  # needs a 3-dim reward
    {"agent": {"kind": "pdpg", "pdpg": {"weights": [0.3, 0.3, 0.4]}}},
])
def test_invalid_config_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**FAST, **bad})


def test_scalar_baselines_resolve():
    c = ExperimentConfig.from_dict({**FAST, "agent": {"kind": "ddpg-load"}})
    assert c.agent_config().reward_weights == (0.0, 1.0) and c.agent_config().num_critics == 1
    c3 = ExperimentConfig.from_dict({**FAST, "env": {"reward_dims": 3}, "agent": {"kind": "ddpg-combined3"}})
    assert len(c3.agent_config().reward_weights) == 3


def test_moving_average():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])
    np.testing.assert_array_equal(moving_average([5, 6], 1), [5, 6])


def _fake_run(tmp_path, name, thr, interval=15.0):
    thr = np.asarray(thr, dtype=float)
    echo = {"sample_interval_minutes": interval, "resolved": {"csv_schema_version": 1}}
    return RunArtifacts(tmp_path / name, thr, np.full((len(thr), 2), 0.3), [], echo)


def test_compare_reflexive(tmp_path):
    art = run_experiment(_cfg(tmp_path, "a"))
    rows = compare_runs([art, load_artifacts(art.out_dir)], tmp_path / "cmp")
    deltas = {k: v for k, v in rows[1].items() if k.startswith("delta_")}
    assert deltas and all(v == 0.0 for v in deltas.values())
    assert (tmp_path / "cmp" / "summary.csv").is_file()


def test_compare_degenerate_and_cdf(tmp_path):
    rows = compare_runs([_fake_run(tmp_path, "c", [0.42] * 50)], tmp_path / "cmp")
    assert rows[0]["throughput_p10"] == rows[0]["throughput_p50"] == rows[0]["throughput_p90"] == 0.42
    x, p = empirical_cdf(np.random.default_rng(0).uniform(size=200))
    assert np.all(np.diff(x) >= 0) and np.all(np.diff(p) > 0) and p[-1] == 1.0
    table = np.loadtxt(tmp_path / "cmp" / "cdf.csv", delimiter=",", skiprows=1, usecols=(1, 2))
    assert table[-1, 1] == 1.0 and np.all(np.diff(table[:, 1]) >= 0)


def test_compare_rejects_mismatch(tmp_path):
    with pytest.raises(ComparisonError):
        compare_runs([])
    with pytest.raises(ComparisonError):
        compare_runs([_fake_run(tmp_path, "a", [0.1]), _fake_run(tmp_path, "b", [0.1], interval=5.0)])
    with pytest.raises(ComparisonError):
        load_artifacts(tmp_path / "nothing")


def test_evaluate_rejects_other_n(tmp_path):
    art = run_experiment(_cfg(tmp_path, "a"))
    three = _cfg(tmp_path, "b", scenario={"num_users": 12, "bs_positions": [[100, 100], [300, 100], [200, 300]]})
    with pytest.raises(SchemaError) as e:
        run_experiment(three, checkpoint=art.checkpoint)
    assert "N=4" in str(e.value) and "N=3" in str(e.value)


# CLI

def test_cli_missing_config(capsys):
    assert main(["train", "--config", "missing.file"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ConfigError") and "missing.file" in err and "\n" not in err


def test_cli_compare_needs_runs():
    with pytest.raises(SystemExit) as e:
        main(["compare"])
    assert e.value.code == 2


def test_cli_unknown_flag():
    with pytest.raises(SystemExit) as e:
        main(["train", "--config", "x", "--bogus"])
    assert e.value.code == 2


def test_cli_end_to_end(tmp_path, capsys):
    cfg = _write(tmp_path, "c", FAST)
    assert main(["genmap", "--config", cfg, "--out", str(tmp_path / "m.bin")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == 0
    assert main(["evaluate", "--config", cfg, "--checkpoint", str(tmp_path / "t" / "checkpoint.bin"),
                 "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "throughput.csv").is_file()
    static = _write(tmp_path, "s", {**FAST, "agent": {**FAST["agent"], "kind": "static-1"}})
    assert main(["static", "--config", static, "--seed", "3", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "solver_stats.csv").is_file()
    assert main(["train", "--config", static]) == 1
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "t"), str(tmp_path / "s"), "--out", str(tmp_path / "cmp")]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 2


def test_cli_evaluate_mismatched_checkpoint(tmp_path, capsys):
    cfg = _write(tmp_path, "c", FAST)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == 0
    three = _write(tmp_path, "three", {**FAST, "scenario": {"num_users": 12,
                                                           "bs_positions": [[100, 100], [300, 100], [200, 300]]}})
    assert main(["evaluate", "--config", three, "--checkpoint", str(tmp_path / "t" / "checkpoint.bin"),
                 "--out", str(tmp_path / "e")]) == 1
    err = capsys.readouterr().err
    assert "SchemaError" in err and "N=4" in err and "N=3" in err
