from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from ctfgo import cli
from ctfgo.runner import RunConfig, horizontal_errors, run
from ctfgo.sim import Scenario, load_scenario, bundled_scenario_path, synthesize


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["run", "--scenario", "open_sky", "--duration", "3", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_run_writes_artifacts(run_dir):
    for name in ("trajectory.csv", "smoothed.csv", "metrics.json", "routing.json", "timing.json"):
        assert (run_dir / name).exists()
    with (run_dir / "trajectory.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.TRAJECTORY_COLUMNS
    assert len(rows) > 100 and all(len(r) == 13 for r in rows)
    m = json.loads((run_dir / "metrics.json").read_text())
    assert set(cli.METRIC_KEYS) <= set(m)
    assert m["routing"]["dropped"] == 0 and m["rmse_2d_m"] < 1.0


def test_run_is_deterministic(run_dir, tmp_path):
    assert cli.main(["run", "--scenario", "open_sky", "--duration", "3", "--seed", "5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.json").read_bytes() == (run_dir / "metrics.json").read_bytes()


def test_compare_identical_reports_zero_delta(run_dir, capsys):
    path = str(run_dir / "metrics.json")
    assert cli.main(["compare", path, path]) == cli.EXIT_OK
    rows = cli.compare(cli.load_metrics(path), cli.load_metrics(path))
    assert all(d == 0 for _, _, _, d in rows if d is not None)


def test_compare_flags_regression(run_dir, tmp_path):
    m = json.loads((run_dir / "metrics.json").read_text())
    m["rmse_2d_m"] *= 2.0
    worse = tmp_path / "worse.json"
    worse.write_text(json.dumps(m))
    assert cli.main(["compare", str(run_dir / "metrics.json"), str(worse)]) == cli.EXIT_REGRESSION
    assert cli.main(["compare", str(worse), str(run_dir / "metrics.json")]) == cli.EXIT_OK


def test_compare_missing_key_is_schema_error(run_dir, tmp_path):
    m = json.loads((run_dir / "metrics.json").read_text())
    del m["smoothness_s"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(m))
    with pytest.raises(cli.SchemaError, match="smoothness_s"):
        cli.load_metrics(bad)
    assert cli.main(["compare", str(run_dir / "metrics.json"), str(bad)]) == cli.EXIT_CONFIG


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--fusion", "medium"],
        ["run", "--gp", "wnox"],
        ["run", "--scenario", "no_such_scenario"],
        ["run", "--seed", "-1"],
        ["frobnicate"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv[0] == "run" else argv) == cli.EXIT_CONFIG


def test_invalid_scenario_file_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("duration = -3\n")
    assert cli.main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_diverged_exit_3(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise cli.SolverDiverged("cost increased for every damping retry")

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", "--duration", "1", "--out", str(tmp_path)]) == cli.EXIT_DIVERGED


def test_synth_writes_per_sensor_csv(tmp_path):
    assert cli.main(["synth", "--scenario", "tunnel", "--duration", "2", "--out", str(tmp_path)]) == 0
    for name, n in (("imu", 401), ("gnss", None), ("pvt", 20), ("odometry", 19), ("speed", 200), ("truth", 401)):
        with (tmp_path / f"{name}.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0].startswith("t")
        if n is not None:
            assert len(rows) - 1 == n


# ---------------------------------------------------------------------------
# runner


def test_bundled_scenarios_load():
    for name in ("open_sky", "tunnel", "multipath", "accelerating"):
        assert load_scenario(bundled_scenario_path(name)).name == name


def test_runner_routing_counts_cover_all_measurements():
    sc = Scenario(duration=3.0, seed=2)
    streams = synthesize(sc)
    res = run(sc, RunConfig(publish=False), streams)
    total = sum(res.routing.values())
    # odometry increments span two stamps but count once
    assert total == len(streams.gnss) + len(streams.odometry) + len(streams.speed)
    assert res.routing["dropped"] == 0 and res.routing["cached"] == 0


def test_runner_loose_fusion():
    sc = Scenario(duration=3.0, seed=2)
    streams = synthesize(sc)
    res = run(sc, RunConfig(fusion="loose", publish=False), streams)
    h = horizontal_errors(sc, streams.truth, res.smoothed_t, res.smoothed_pose)
    assert np.sqrt(np.mean(np.sum(h**2, 1))) < 1.0
    assert all(np.all(s.clock == 0) for s in res.smoothed)


def test_runner_shuffle_same_cost():
    sc = Scenario(duration=2.0, seed=4)
    streams = synthesize(sc)
    a = run(sc, RunConfig(publish=False), streams)
    b = run(sc, RunConfig(publish=False, shuffle_seed=9), streams)
    assert abs(a.final_cost - b.final_cost) <= 1e-9 and a.routing == b.routing
