"""Seeded Monte Carlo benchmark driver.

Ground-truth tracks are shared across runs; measurement noise, clutter, and
any SMC randomness are redrawn per run from sub-streams derived from
(master_seed, run_id, stream_id), so results are independent of worker
scheduling.  Per-scan rows, a summary table, and plot-ready columnar files
are written at the end of a batch; partial outputs are removed on failure.
"""
from __future__ import annotations

import copy
import csv
import io
import multiprocessing
import os
import time
from dataclasses import dataclass

import numpy as np

from .config import build_scenario
from .member import MsMemberFilter
from .metrics import OspaParams, RunSummary, SummaryRow, cardinality_stats, ospa, summarize
from .models import simulate_all_scans
from .tcphd import MsTcphdFilter

RUNS_HEADER = ["run_id", "scan", "true_n", "est_n", "ospa", "scan_ms"]
SUMMARY_HEADER = ["filter", "s", "pD", "clutter_rate", "median", "q1", "q3", "mean_scan_ms"]

_FILTER_STREAM = 0
_SENSOR_STREAM_BASE = 1000


def make_filter(scenario, name: str | None = None):
    name = name or scenario.filter_name
    if name == "ms-member":
        return MsMemberFilter(scenario.motion, scenario.sensors, scenario.birth,
                              scenario.member_params, scenario.density)
    if name == "ms-tcphd":
        return MsTcphdFilter(scenario.motion, scenario.sensors, scenario.birth,
                             scenario.tcphd_params, scenario.density)
    raise ValueError(f"unknown filter {name!r}")


def run_rng(master_seed: int, run_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, run_id, stream)))


def simulate_run_measurements(scenario, master_seed: int, run_id: int) -> list:
    rngs = [run_rng(master_seed, run_id, _SENSOR_STREAM_BASE + i)
            for i in range(len(scenario.sensors))]
    return simulate_all_scans(scenario.truth, scenario.sensors, rngs)


def execute_run(config: dict, filter_name: str | None, master_seed: int,
                run_id: int, ospa_params: OspaParams = OspaParams()) -> RunSummary:
    """One Monte Carlo run: simulate, filter, score.  Pure given its seed."""
    scenario = build_scenario(config)
    filt = make_filter(scenario, filter_name)
    scans = simulate_run_measurements(scenario, master_seed, run_id)
    rng = run_rng(master_seed, run_id, _FILTER_STREAM)
    truth_n = scenario.truth.cardinality()
    state = filt.initial_state()
    ospa_vals = np.zeros(scenario.truth.num_scans)
    est_n = np.zeros(scenario.truth.num_scans, dtype=int)
    scan_ms = np.zeros(scenario.truth.num_scans)
    for k, measurements in enumerate(scans):
        t0 = time.perf_counter()
        state, est, _ = filt.step(state, measurements, rng)
        scan_ms[k] = (time.perf_counter() - t0) * 1e3
        est_n[k] = est.shape[0]
        truth_pos = scenario.truth.states_at(k)[:, :2]
        ospa_vals[k] = ospa(est[:, :2] if est.size else est, truth_pos, ospa_params)
    return RunSummary(run_id, ospa_vals, truth_n.astype(int), est_n, scan_ms)


def _worker(args):
    config, filter_name, master_seed, run_id = args
    return execute_run(config, filter_name, master_seed, run_id)


def run_batch(config: dict, master_seed: int, mc_runs: int, jobs: int = 1,
              filter_name: str | None = None) -> list:
    """Monte Carlo batch; results are identical for any parallelism degree."""
    tasks = [(config, filter_name, master_seed, r) for r in range(mc_runs)]
    if jobs <= 1 or mc_runs == 1:
        results = [_worker(t) for t in tasks]
    else:
        with multiprocessing.get_context("fork").Pool(processes=jobs) as pool:
            results = pool.map(_worker, tasks)
    return sorted(results, key=lambda r: r.run_id)


def _fmt(x) -> str:
    return repr(float(x))


def write_runs_csv(path: str, runs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUNS_HEADER)
        for run in runs:
            for k in range(run.ospa_per_scan.size):
                writer.writerow([run.run_id, k, int(run.true_n[k]), int(run.est_n[k]),
                                 _fmt(run.ospa_per_scan[k]), _fmt(run.scan_ms[k])])


def read_runs_csv(path: str) -> list:
    """Inverse of write_runs_csv; used to regenerate summaries losslessly."""
    rows: dict = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RUNS_HEADER:
            raise ValueError(f"unexpected runs CSV header {header!r}")
        for run_id, scan, true_n, est_n, o, ms in reader:
            rows.setdefault(int(run_id), []).append(
                (int(scan), int(true_n), int(est_n), float(o), float(ms)))
    out = []
    for run_id in sorted(rows):
        rows[run_id].sort()
        arr = np.array(rows[run_id], dtype=float)
        out.append(RunSummary(run_id, arr[:, 3], arr[:, 1].astype(int),
                              arr[:, 2].astype(int), arr[:, 4]))
    return out


def write_summary_csv(path: str, row: SummaryRow) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerow([row.filter_name, row.n_sensors, _fmt(row.detection_prob),
                         _fmt(row.clutter_rate), _fmt(row.median_ospa), _fmt(row.q1_ospa),
                         _fmt(row.q3_ospa), _fmt(row.mean_scan_ms)])


def write_cardinality_table(path: str, runs, true_n) -> None:
    mean_est, std_est = cardinality_stats(runs)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# scan true_n mean_est std_est\n")
        for k in range(len(true_n)):
            fh.write(f"{k} {int(true_n[k])} {_fmt(mean_est[k])} {_fmt(std_est[k])}\n")


def write_ospa_box(path: str, runs, label: str) -> None:
    avg = np.array([r.time_averaged_ospa for r in runs])
    q1, med, q3 = np.percentile(avg, [25.0, 50.0, 75.0])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# filter median q1 q3 min max\n")
        fh.write(f"{label} {_fmt(med)} {_fmt(q1)} {_fmt(q3)} "
                 f"{_fmt(avg.min())} {_fmt(avg.max())}\n")


@dataclass(frozen=True)
class BenchResult:
    runs: list
    summary: SummaryRow
    out_dir: str


def run_benchmark(config: dict, master_seed: int, mc_runs: int, out_dir: str,
                  jobs: int = 1, filter_name: str | None = None) -> BenchResult:
    """Run a seeded batch and write runs.csv, summary.csv, and plot data."""
    scenario = build_scenario(config)
    name = filter_name or scenario.filter_name
    runs = run_batch(config, master_seed, mc_runs, jobs, filter_name)
    summary = summarize(runs, name, len(scenario.sensors),
                        scenario.sensors[0].detection_prob,
                        scenario.sensors[0].clutter_rate)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        for fname, writer in (
            ("runs.csv", lambda p: write_runs_csv(p, runs)),
            ("summary.csv", lambda p: write_summary_csv(p, summary)),
            ("cardinality.txt",
             lambda p: write_cardinality_table(p, runs, scenario.truth.cardinality())),
            ("ospa_box.txt", lambda p: write_ospa_box(p, runs, name)),
        ):
            path = os.path.join(out_dir, fname)
            written.append(path)
            writer(path)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return BenchResult(runs, summary, out_dir)


def apply_axis(config: dict, axis: str, value) -> dict:
    """Sweep helper: return a config with the axis applied to every sensor."""
    out = copy.deepcopy(config)
    if axis == "s":
        n = int(value)
        if n < 1:
            raise ValueError("sensor count must be at least 1")
        template = out["sensors"][0]
        if template["type"] != "linear" and n != len(out["sensors"]):
            raise ValueError("sensor-count sweeps need linear sensor configs")
        out["sensors"] = [dict(template) for _ in range(n)]
    elif axis == "pd":
        for s in out["sensors"]:
            s["detection_prob"] = float(value)
    elif axis == "clutter":
        for s in out["sensors"]:
            s["clutter_rate"] = float(value)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; use s, pd, or clutter")
    return out


def sweep(config: dict, axis: str, values, master_seed: int, mc_runs: int,
          out_dir: str, jobs: int = 1, filter_name: str | None = None) -> list:
    """Run one benchmark per axis value; seeds offset per value index."""
    rows = []
    os.makedirs(out_dir, exist_ok=True)
    for idx, value in enumerate(values):
        sub_cfg = apply_axis(config, axis, value)
        sub_dir = os.path.join(out_dir, f"{axis}={value}")
        result = run_benchmark(sub_cfg, master_seed + idx, mc_runs, sub_dir,
                               jobs, filter_name)
        rows.append((value, result.summary))
    table = os.path.join(out_dir, "sweep_summary.csv")
    with open(table, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([axis] + SUMMARY_HEADER)
        for value, row in rows:
            writer.writerow([value, row.filter_name, row.n_sensors,
                             _fmt(row.detection_prob), _fmt(row.clutter_rate),
                             _fmt(row.median_ospa), _fmt(row.q1_ospa), _fmt(row.q3_ospa),
                             _fmt(row.mean_scan_ms)])
    return rows


def strip_timing_columns(csv_text: str) -> str:
    """Project wall-clock fields out of a CSV; timing is telemetry, not results."""
    reader = csv.reader(io.StringIO(csv_text))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    drop: list = []
    for row in reader:
        if not drop:
            drop = [i for i, name in enumerate(row) if name in ("scan_ms", "mean_scan_ms")]
        writer.writerow([v for i, v in enumerate(row) if i not in drop])
    return out.getvalue()
