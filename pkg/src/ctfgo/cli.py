"""Command-line experiment runner: ``ctfgo run | compare | synth``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import geodesy
from .lie import so3_log
from .graph import ConfigError, SolverDiverged
from .metrics import METRIC_KEYS, MetricsReport, evaluate_trajectory, ned_euler
from .runner import RunConfig, RunResult, run
from .sim import ScenarioError, bundled_scenario_path, load_scenario, synthesize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_REGRESSION = 4

TRAJECTORY_COLUMNS = ("t", "x_e", "y_e", "z_e", "lat", "lon", "h", "roll", "pitch", "yaw", "vN", "vE", "vD")
# metrics where larger is worse, with the relative increase tolerated by ``compare``
REGRESSION_KEYS = ("rmse_2d_m", "rmse_3d_m", "max_2d_err_m", "mean_yaw_err_deg", "velocity_rmse_mps")

log = logging.getLogger("ctfgo")


class SchemaError(ValueError):
    pass


def resolve_scenario(name_or_path: str) -> Path:
    """A TOML path, or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenario_path(name_or_path)
    if bundled.exists():
        return bundled
    raise ScenarioError(f"scenario: no file or bundled scenario named {name_or_path!r}")


def trajectory_rows(t, poses, velocities):
    """Rows of the trajectory CSV; angles in degrees, velocities in NED."""
    poses = np.asarray(poses).reshape(-1, 4, 4)
    if len(t) == 0:
        return []
    p = poses[:, :3, 3]
    llh = geodesy.ecef_to_llh(p)
    rpy = np.degrees(ned_euler(poses))
    v_ned = np.einsum("nij,nj->ni", geodesy.dcm_ecef_to_ned(llh), np.asarray(velocities))
    rows = []
    for k in range(len(t)):
        rows.append([f"{t[k]:.6f}", *(f"{x:.4f}" for x in p[k]), f"{np.degrees(llh[k, 0]):.9f}",
                     f"{np.degrees(llh[k, 1]):.9f}", f"{llh[k, 2]:.4f}", *(f"{x:.5f}" for x in rpy[k]),
                     *(f"{x:.5f}" for x in v_ned[k])])
    return rows


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def metrics_report(result: RunResult, truth) -> MetricsReport:
    """Errors and smoothness of the published high-rate trajectory."""
    s = result.scenario
    ev = evaluate_trajectory(result.published_t, result.published_pose, truth, s.origin_llh,
                             result.published_velocity, t_end=s.duration)
    its = [r.iterations for r in result.reports]
    return MetricsReport(
        rmse_2d_m=ev["rmse_2d"], rmse_3d_m=ev["rmse_3d"], max_2d_err_m=ev["max_2d"],
        mean_yaw_err_deg=ev["mean_yaw_deg"], smoothness_s=ev["smoothness"], n_epochs=int(ev["t"].size),
        mean_iterations=float(np.mean(its)) if its else 0.0, max_iterations=int(max(its, default=0)),
        velocity_rmse_mps=ev.get("velocity_rmse", float("nan")),
        errors_2d_m=[round(float(e), 6) for e in ev["errors_2d"]],
    )


def _scenario(args):
    scenario = load_scenario(resolve_scenario(args.scenario))
    if args.seed is not None:
        scenario = scenario.with_overrides(seed=args.seed)
    if args.duration is not None:
        scenario = scenario.with_overrides(duration=args.duration)
    return scenario


def cmd_run(args) -> int:
    scenario = _scenario(args)
    cfg = RunConfig(fusion=args.fusion, gp_model=args.gp, loss=args.loss, lag_seconds=args.lag)
    streams = synthesize(scenario)
    result = run(scenario, cfg, streams)
    report = metrics_report(result, streams.truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS,
              trajectory_rows(result.published_t, result.published_pose, result.published_velocity))
    sm = result.smoothed
    write_csv(out / "smoothed.csv", TRAJECTORY_COLUMNS,
              trajectory_rows([s.timestamp for s in sm], [s.pose for s in sm], [s.world_velocity for s in sm]))
    metrics = {k: _clean(v) for k, v in report.to_dict().items()}
    metrics["routing"] = result.routing
    metrics["config"] = {"scenario": scenario.name, "seed": scenario.seed, "fusion": cfg.fusion,
                         "gp": cfg.gp_model, "loss": cfg.loss, "lag": cfg.lag_seconds}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out / "routing.json").write_text(json.dumps(result.routing, indent=2, sort_keys=True) + "\n")
    secs = [r.seconds for r in result.reports]
    timing = {"wall_seconds": result.wall_seconds, "mean_solve_ms": 1e3 * float(np.mean(secs)) if secs else 0.0,
              "max_solve_ms": 1e3 * max(secs, default=0.0), "n_windows": len(secs)}
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    print(f"rmse_2d {report.rmse_2d_m:.3f} m  rmse_3d {report.rmse_3d_m:.3f} m  "
          f"smoothness {report.smoothness_s:.4g}  routing {result.routing}  wall {result.wall_seconds:.1f} s")
    return EXIT_OK


def load_metrics(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot read metrics ({exc})") from None
    missing = [k for k in METRIC_KEYS if k not in data]
    if missing:
        raise SchemaError(f"{path}: missing metric keys {missing}")
    return data


def compare(a: dict, b: dict) -> list[tuple[str, float | None, float | None, float | None]]:
    """Per-metric ``(key, a, b, b - a)``; ``None`` where a value is missing or not finite."""
    rows = []
    for k in METRIC_KEYS:
        va, vb = a.get(k), b.get(k)
        d = vb - va if isinstance(va, (int, float)) and isinstance(vb, (int, float)) else None
        rows.append((k, va, vb, d))
    return rows


def regressions(rows, tolerance: float) -> list[str]:
    out = []
    for k, va, vb, d in rows:
        if k in REGRESSION_KEYS and d is not None and d > tolerance * max(abs(va), 1e-12):
            out.append(k)
    return out


def cmd_compare(args) -> int:
    rows = compare(load_metrics(args.a), load_metrics(args.b))
    fmt = lambda v: "-" if v is None else f"{v:.6g}"
    print(f"{'metric':<20} {'a':>12} {'b':>12} {'delta':>12}")
    for k, va, vb, d in rows:
        print(f"{k:<20} {fmt(va):>12} {fmt(vb):>12} {fmt(d):>12}")
    bad = regressions(rows, args.tolerance)
    if bad:
        print("regression: " + ", ".join(bad))
        return EXIT_REGRESSION
    return EXIT_OK


def cmd_synth(args) -> int:
    scenario = _scenario(args)
    st = synthesize(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    f = lambda x: f"{x:.9g}"
    write_csv(out / "imu.csv", ("t", "ax", "ay", "az", "gx", "gy", "gz"),
              [[f"{t:.6f}", *map(f, a), *map(f, g)] for t, a, g in zip(st.imu_t, st.imu_acc, st.imu_gyro)])
    write_csv(out / "gnss.csv", ("t", "sat_id", "sx", "sy", "sz", "svx", "svy", "svz", "pseudorange", "doppler_hz",
                                 "cn0_dbhz", "elevation_deg"),
              [[f"{ep.t:.6f}", int(ep.sat_ids[k]), *map(f, ep.sat_pos[k]), *map(f, ep.sat_vel[k]),
                f"{ep.pseudorange[k]:.4f}", f"{ep.doppler_hz[k]:.4f}", f"{ep.cn0_dbhz[k]:.2f}",
                f"{np.degrees(ep.elevation[k]):.4f}"] for ep in st.gnss for k in range(len(ep))])
    write_csv(out / "pvt.csv", ("t", "x_e", "y_e", "z_e", "vN", "vE", "vD", "std_n", "std_e", "std_d"),
              [[f"{m.t:.6f}", *(f"{x:.4f}" for x in m.position), *(f"{x:.5f}" for x in m.velocity_ned),
                *map(f, np.ravel(m.std)[:3])] for m in st.pvt])
    write_csv(out / "odometry.csv", ("t_i", "t_j", "dx", "dy", "dz", "rx", "ry", "rz"),
              [[f"{m.t_i:.6f}", f"{m.t_j:.6f}", *map(f, m.delta[:3, 3]), *map(f, so3_log(m.delta[:3, :3]))]
               for m in st.odometry])
    write_csv(out / "speed.csv", ("t", "vx", "vy"), [[f"{m.t:.6f}", *map(f, m.v2d)] for m in st.speed])
    T, w, _ = st.truth.state(st.imu_t)
    write_csv(out / "truth.csv", TRAJECTORY_COLUMNS,
              trajectory_rows(st.imu_t, T, np.einsum("nij,nj->ni", T[:, :3, :3], w[:, :3])))
    print(f"wrote {len(st.imu_t)} imu, {len(st.gnss)} gnss, {len(st.pvt)} pvt, {len(st.odometry)} odometry, "
          f"{len(st.speed)} speed records to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctfgo", description="Continuous-time factor-graph GNSS/IMU fusion experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="estimate a scenario and write trajectory, metrics and routing statistics")
    r.add_argument("--scenario", default="open_sky", help="TOML path or bundled scenario name")
    r.add_argument("--fusion", choices=("loose", "tight"), default="tight")
    r.add_argument("--gp", choices=("wnoa", "wnoj"), default="wnoj")
    r.add_argument("--loss", choices=("none", "cauchy", "huber"), default="cauchy")
    r.add_argument("--lag", type=float, default=3.0, help="smoother lag in seconds")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--duration", type=float, default=None, help="override the scenario duration (s)")
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="metric deltas between two metrics.json files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tolerance", type=float, default=0.1, help="relative increase counted as a regression")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("synth", help="write a scenario's measurement streams as CSV without estimating")
    s.add_argument("--scenario", default="open_sky")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--duration", type=float, default=None)
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: seed: must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDiverged as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
