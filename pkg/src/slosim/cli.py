"""Experiment harness: single runs, sweeps, and calibration ingestion.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
Output directory precedence: --out flag, then SLOSIM_OUTPUT_DIR, then the
config's output_dir.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import metrics
from .config import AXIS_COLUMN, AXIS_RATE, AXIS_RATIO, ExperimentConfig, load_config
from .errors import ConfigurationError
from .latency import read_calibration_rows, repair_monotone, save_calibration_csv
from .metrics import RunReport, report_to_csv, report_to_json
from .sim import SCHEDULERS, simulate

ENV_OUTPUT_DIR = "SLOSIM_OUTPUT_DIR"

SUMMARY_METRICS = (
    "tasks",
    "completed",
    "slo_attainment",
    "rt_slo_attainment",
    "nrt_slo_attainment",
    "ttft_attainment",
    "rt_ttft_attainment",
    "nrt_ttft_attainment",
    "tpot_attainment",
    "rt_tpot_attainment",
    "nrt_tpot_attainment",
    "mean_completion_time_s",
    "rt_mean_completion_time_s",
    "nrt_mean_completion_time_s",
    "total_utility",
)


def _resolve_outdir(cfg: ExperimentConfig, flag_value: str | None) -> str:
    if flag_value:
        return flag_value
    env = os.environ.get(ENV_OUTPUT_DIR)
    if env:
        return env
    return cfg.output_dir


def _atomic_write(path: str, data: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _pct(x) -> str:
    return "n/a" if x is None else f"{x:.0%}"


def _num(x, fmt="{:.3f}") -> str:
    return "n/a" if x is None else fmt.format(x)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _aggregate_row(report: RunReport) -> dict:
    a = report.aggregates
    return {
        "tasks": a.overall.tasks,
        "completed": a.overall.completed,
        "slo_attainment": a.overall.slo_attainment,
        "rt_slo_attainment": a.rt.slo_attainment,
        "nrt_slo_attainment": a.nrt.slo_attainment,
        "ttft_attainment": a.overall.ttft_attainment,
        "rt_ttft_attainment": a.rt.ttft_attainment,
        "nrt_ttft_attainment": a.nrt.ttft_attainment,
        "tpot_attainment": a.overall.tpot_attainment,
        "rt_tpot_attainment": a.rt.tpot_attainment,
        "nrt_tpot_attainment": a.nrt.tpot_attainment,
        "mean_completion_time_s": a.overall.mean_completion_time,
        "rt_mean_completion_time_s": a.rt.mean_completion_time,
        "nrt_mean_completion_time_s": a.nrt.mean_completion_time,
        "total_utility": a.total_utility,
    }


def _row_from_cell_json(payload: dict) -> dict:
    agg = payload["aggregates"]
    return {
        "tasks": agg["overall"]["tasks"],
        "completed": agg["overall"]["completed"],
        "slo_attainment": agg["overall"]["slo_attainment"],
        "rt_slo_attainment": agg["rt"]["slo_attainment"],
        "nrt_slo_attainment": agg["nrt"]["slo_attainment"],
        "ttft_attainment": agg["overall"]["ttft_attainment"],
        "rt_ttft_attainment": agg["rt"]["ttft_attainment"],
        "nrt_ttft_attainment": agg["nrt"]["ttft_attainment"],
        "tpot_attainment": agg["overall"]["tpot_attainment"],
        "rt_tpot_attainment": agg["rt"]["tpot_attainment"],
        "nrt_tpot_attainment": agg["nrt"]["tpot_attainment"],
        "mean_completion_time_s": agg["overall"]["mean_completion_time"],
        "rt_mean_completion_time_s": agg["rt"]["mean_completion_time"],
        "nrt_mean_completion_time_s": agg["nrt"]["mean_completion_time"],
        "total_utility": agg["total_utility"],
    }


def _run_cell(
    cfg: ExperimentConfig,
    scheduler: str,
    seed: int,
    arrival_rate: float | None = None,
    rt_fraction: float | None = None,
):
    tasks = cfg.build_tasks(seed, arrival_rate=arrival_rate, rt_fraction=rt_fraction)
    sim = simulate(
        tasks,
        scheduler,
        cfg.model,
        cfg.adaptor,
        horizon=cfg.horizon,
        orca_cfg=cfg.orca,
        mlfq_cfg=cfg.fastserve,
        period_budget_ms=cfg.period_budget_ms,
    )
    report = metrics.build_report(tasks, sim.records, scheduler=scheduler, seed=seed)
    return report, sim


_TABLE_HEADER = (
    f"{'scheduler':<10} {'seed':>5} {'tasks':>6} {'slo':>6} {'rt_slo':>7} "
    f"{'nrt_slo':>8} {'ttft':>6} {'tpot':>6} {'mean_ct_s':>10} {'utility':>9}"
)


def _table_line(report: RunReport) -> str:
    a = report.aggregates
    return (
        f"{report.scheduler:<10} {report.seed!s:>5} {a.overall.tasks:>6} "
        f"{_pct(a.overall.slo_attainment):>6} {_pct(a.rt.slo_attainment):>7} "
        f"{_pct(a.nrt.slo_attainment):>8} {_pct(a.overall.ttft_attainment):>6} "
        f"{_pct(a.overall.tpot_attainment):>6} {_num(a.overall.mean_completion_time):>10} "
        f"{_num(a.total_utility, '{:g}'):>9}"
    )


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    schedulers = [args.scheduler] if args.scheduler else list(cfg.schedulers)
    outdir = _resolve_outdir(cfg, args.out)
    os.makedirs(outdir, exist_ok=True)
    print(_TABLE_HEADER)
    for scheduler in schedulers:
        for seed in cfg.seeds:
            report, sim = _run_cell(cfg, scheduler, seed)
            base = os.path.join(outdir, f"report_{scheduler}_{seed}")
            _atomic_write(base + ".json", report_to_json(report))
            _atomic_write(base + ".csv", report_to_csv(report))
            if cfg.verbose_log:
                log = "".join(ev.log_line() + "\n" for ev in sim.events)
                _atomic_write(os.path.join(outdir, f"runlog_{scheduler}_{seed}.tsv"), log)
            print(_table_line(report))
    return 0


def _cell_key(axis: str, value: float, scheduler: str, seed: int) -> str:
    return f"{AXIS_COLUMN[axis]}={value}|{scheduler}|seed={seed}"


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.sweep is None:
        raise ConfigurationError("sweep: config has no sweep section")
    if args.axis != cfg.sweep.axis:
        raise ConfigurationError(
            f"sweep.axis: config sweeps {cfg.sweep.axis!r} but --axis is {args.axis!r}"
        )
    axis = cfg.sweep.axis
    axis_col = AXIS_COLUMN[axis]
    outdir = _resolve_outdir(cfg, args.out)
    cells_dir = os.path.join(outdir, "cells")
    os.makedirs(cells_dir, exist_ok=True)
    manifest_path = os.path.join(outdir, "manifest.json")

    manifest = {"fingerprint": cfg.fingerprint, "completed": {}}
    if os.path.exists(manifest_path):
        try:
            with open(manifest_path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError):
            loaded = None
        if loaded and loaded.get("fingerprint") == cfg.fingerprint:
            manifest = loaded

    rows = []
    computed = skipped = 0
    for value in cfg.sweep.values:
        for scheduler in cfg.schedulers:
            for seed in cfg.seeds:
                key = _cell_key(axis, value, scheduler, seed)
                cell_path = os.path.join(cells_dir, f"{axis_col}_{value}_{scheduler}_{seed}.json")
                if key in manifest["completed"] and os.path.exists(cell_path):
                    with open(cell_path) as fh:
                        row = _row_from_cell_json(json.load(fh))
                    skipped += 1
                else:
                    report, _sim = _run_cell(
                        cfg,
                        scheduler,
                        seed,
                        arrival_rate=value if axis == AXIS_RATE else None,
                        rt_fraction=value if axis == AXIS_RATIO else None,
                    )
                    _atomic_write(cell_path, report_to_json(report))
                    row = _aggregate_row(report)
                    manifest["completed"][key] = os.path.relpath(cell_path, outdir)
                    _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
                    computed += 1
                rows.append({axis_col: value, "scheduler": scheduler, "seed": seed, **row})

    header = [axis_col, "scheduler", "seed", *SUMMARY_METRICS]
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(_cell(row.get(col)) for col in header))
    _atomic_write(os.path.join(outdir, "summary.csv"), "\n".join(out) + "\n")

    mean_rows = []
    for value in cfg.sweep.values:
        for scheduler in cfg.schedulers:
            group = [r for r in rows if r[axis_col] == value and r["scheduler"] == scheduler]
            mean_row = {axis_col: value, "scheduler": scheduler, "seeds": len(group)}
            for m in SUMMARY_METRICS:
                present = [r[m] for r in group if r[m] is not None]
                mean_row[m] = (sum(present) / len(present)) if present else None
            mean_rows.append(mean_row)
    mean_header = [axis_col, "scheduler", "seeds", *SUMMARY_METRICS]
    out = [",".join(mean_header)]
    for row in mean_rows:
        out.append(",".join(_cell(row.get(col)) for col in mean_header))
    _atomic_write(os.path.join(outdir, "summary_mean.csv"), "\n".join(out) + "\n")

    print(f"sweep complete: {computed} cells computed, {skipped} reused, "
          f"{len(mean_rows)} mean rows -> {outdir}")
    return 0


def cmd_calibrate(args) -> int:
    if not os.path.exists(args.infile):
        raise ConfigurationError(f"calibrate: input file not found: {args.infile}")
    points = read_calibration_rows(args.infile)
    if not points:
        raise ConfigurationError(f"calibrate: {args.infile} contains no calibration points")
    repaired, warnings = repair_monotone(points)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    save_calibration_csv(args.outfile, repaired)
    print(f"wrote {len(repaired)} calibration points -> {args.outfile}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slosim",
        description="SLO-driven LLM inference scheduling testbed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario for each scheduler and seed")
    p_run.add_argument("--config", required=True, help="path to the scenario JSON config")
    p_run.add_argument("--scheduler", choices=SCHEDULERS, help="run a single scheduler")
    p_run.add_argument("--out", help="output directory (overrides env and config)")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run an arrival-rate or RT-ratio sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=(AXIS_RATE, AXIS_RATIO))
    p_sweep.add_argument("--out", help="output directory (overrides env and config)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser("calibrate", help="normalize measured batch/latency points")
    p_cal.add_argument("--in", dest="infile", required=True, help="measured CSV (batch,latency_ms)")
    p_cal.add_argument("--out", dest="outfile", required=True, help="output calibration CSV")
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
