import json
import os

import pytest

from slosim.cli import main

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
STATIC_CONFIG = os.path.join(REPO, "configs", "static_reference.json")


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "workload": {
            "kind": "poisson",
            "arrival_rate": 2.0,
            "rt_fraction": 0.5,
            "task_count": 30,
        },
        "latency": {"calibration": "default"},
        "schedulers": ["slice", "orca"],
        "seeds": [1, 2],
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_run_static_prints_expected_attainments(tmp_path, capsys):
    rc = main(["run", "--config", STATIC_CONFIG, "--out", str(tmp_path / "o")])
    assert rc == 0
    out = capsys.readouterr().out
    lines = out.strip().split("\n")
    slice_line = next(l for l in lines if l.startswith("slice"))
    orca_line = next(l for l in lines if l.startswith("orca"))
    fs_line = next(l for l in lines if l.startswith("fastserve"))
    assert "100%" in slice_line
    assert "22%" in orca_line
    assert "22%" in fs_line


def test_run_writes_report_files(tmp_path):
    cfg = write_config(tmp_path)
    rc = main(["run", "--config", cfg])
    assert rc == 0
    outdir = tmp_path / "out"
    for sched in ("slice", "orca"):
        for seed in (1, 2):
            assert (outdir / f"report_{sched}_{seed}.json").exists()
            assert (outdir / f"report_{sched}_{seed}.csv").exists()


def test_run_twice_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", cfg]) == 0
    first = {
        p.name: read_bytes(p) for p in (tmp_path / "out").iterdir() if p.is_file()
    }
    assert main(["run", "--config", cfg]) == 0
    second = {
        p.name: read_bytes(p) for p in (tmp_path / "out").iterdir() if p.is_file()
    }
    assert first == second


def test_run_single_scheduler_flag(tmp_path):
    cfg = write_config(tmp_path)
    rc = main(["run", "--config", cfg, "--scheduler", "orca"])
    assert rc == 0
    names = {p.name for p in (tmp_path / "out").iterdir()}
    assert names == {"report_orca_1.json", "report_orca_1.csv", "report_orca_2.json", "report_orca_2.csv"}


def test_unknown_scheduler_flag_exits_2_naming_choices(tmp_path, capsys):
    cfg = write_config(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", cfg, "--scheduler", "mystery"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "slice" in err and "orca" in err and "fastserve" in err


def test_unknown_scheduler_in_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, schedulers=["slice", "mystery"])
    rc = main(["run", "--config", cfg])
    assert rc == 2
    assert "valid choices" in capsys.readouterr().err


def test_bad_config_field_diagnostic(tmp_path, capsys):
    cfg = write_config(tmp_path, workload={"kind": "poisson", "arrival_rate": "fast"})
    rc = main(["run", "--config", cfg])
    assert rc == 2
    assert "workload.arrival_rate" in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "workload": {\n')
    rc = main(["run", "--config", str(path)])
    assert rc == 2
    assert "line" in capsys.readouterr().err


def test_missing_calibration_file_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, latency={"calibration": "nope.csv"})
    rc = main(["run", "--config", cfg])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_env_var_overrides_output_dir(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    env_dir = tmp_path / "env_out"
    monkeypatch.setenv("SLOSIM_OUTPUT_DIR", str(env_dir))
    assert main(["run", "--config", cfg, "--scheduler", "orca"]) == 0
    assert (env_dir / "report_orca_1.json").exists()


def test_verbose_log_written(tmp_path):
    cfg = write_config(tmp_path, verbose_log=True, schedulers=["slice"], seeds=[1])
    assert main(["run", "--config", cfg]) == 0
    log = (tmp_path / "out" / "runlog_slice_1.tsv").read_text()
    assert log
    for line in log.splitlines():
        assert len(line.split("\t")) == 4


# ------------------------------------------------------------------- sweeps


def sweep_config(tmp_path, axis="rate", values=(0.5, 1.0), seeds=(1, 2)):
    return write_config(
        tmp_path,
        workload={"kind": "poisson", "rt_fraction": 0.5, "task_count": 20, "arrival_rate": 1.0},
        schedulers=["slice", "orca"],
        seeds=list(seeds),
        sweep={"axis": axis, "values": list(values)},
    )


def test_sweep_row_counts(tmp_path):
    cfg = sweep_config(tmp_path)
    assert main(["sweep", "--config", cfg, "--axis", "rate"]) == 0
    summary = (tmp_path / "out" / "summary.csv").read_text().strip().split("\n")
    assert len(summary) == 1 + 2 * 2 * 2  # header + values x schedulers x seeds
    mean = (tmp_path / "out" / "summary_mean.csv").read_text().strip().split("\n")
    assert len(mean) == 1 + 2 * 2
    assert summary[0].startswith("arrival_rate,scheduler,seed,")


def test_ratio_sweep_axis_column_named_rt_fraction(tmp_path):
    cfg = sweep_config(tmp_path, axis="ratio", values=(0.2, 0.8))
    assert main(["sweep", "--config", cfg, "--axis", "ratio"]) == 0
    header = (tmp_path / "out" / "summary.csv").read_text().split("\n")[0]
    assert header.split(",")[0] == "rt_fraction"


def test_sweep_axis_mismatch_exits_2(tmp_path, capsys):
    cfg = sweep_config(tmp_path, axis="rate")
    rc = main(["sweep", "--config", cfg, "--axis", "ratio"])
    assert rc == 2


def test_sweep_resumes_from_manifest(tmp_path, capsys):
    cfg = sweep_config(tmp_path)
    assert main(["sweep", "--config", cfg, "--axis", "rate"]) == 0
    first = capsys.readouterr().out
    assert "8 cells computed, 0 reused" in first
    summary1 = (tmp_path / "out" / "summary.csv").read_bytes()
    # simulate an interrupted run: drop one completed cell from the manifest
    manifest_path = tmp_path / "out" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    dropped = sorted(manifest["completed"])[0]
    del manifest["completed"][dropped]
    manifest_path.write_text(json.dumps(manifest))
    assert main(["sweep", "--config", cfg, "--axis", "rate"]) == 0
    second = capsys.readouterr().out
    assert "1 cells computed, 7 reused" in second
    assert (tmp_path / "out" / "summary.csv").read_bytes() == summary1


def test_sweep_requires_sweep_section(tmp_path, capsys):
    cfg = write_config(tmp_path)
    rc = main(["sweep", "--config", cfg, "--axis", "rate"])
    assert rc == 2


# ---------------------------------------------------------------- calibrate


def test_calibrate_valid_two_points(tmp_path):
    src = tmp_path / "measured.csv"
    src.write_text("batch,latency_ms\n1,55\n9,128.59\n")
    dst = tmp_path / "cal.csv"
    assert main(["calibrate", "--in", str(src), "--out", str(dst)]) == 0
    lines = dst.read_text().strip().split("\n")
    assert lines[0] == "batch,latency_ms"
    assert lines[1].startswith("1,55") and lines[2].startswith("9,128.59")


def test_calibrate_sorts_rows(tmp_path):
    src = tmp_path / "measured.csv"
    src.write_text("batch,latency_ms\n2,70\n1,50\n")
    dst = tmp_path / "cal.csv"
    assert main(["calibrate", "--in", str(src), "--out", str(dst)]) == 0
    lines = dst.read_text().strip().split("\n")[1:]
    assert [l.split(",")[0] for l in lines] == ["1", "2"]


def test_calibrate_repairs_with_warning(tmp_path, capsys):
    src = tmp_path / "measured.csv"
    src.write_text("batch,latency_ms\n1,60\n2,55\n")
    dst = tmp_path / "cal.csv"
    assert main(["calibrate", "--in", str(src), "--out", str(dst)]) == 0
    err = capsys.readouterr().err
    assert "warning" in err
    lines = dst.read_text().strip().split("\n")[1:]
    assert lines == ["1,57.5", "2,57.5"]


def test_calibrate_unparseable_row_names_row(tmp_path, capsys):
    src = tmp_path / "measured.csv"
    src.write_text("batch,latency_ms\n1,50\noops,nan?\n")
    rc = main(["calibrate", "--in", str(src), "--out", str(tmp_path / "cal.csv")])
    assert rc != 0
    assert "row 3" in capsys.readouterr().err


def test_calibrated_output_loads_cleanly(tmp_path):
    src = tmp_path / "measured.csv"
    src.write_text("batch,latency_ms\n3,80\n1,60\n2,55\n")
    dst = tmp_path / "cal.csv"
    assert main(["calibrate", "--in", str(src), "--out", str(dst)]) == 0
    from slosim.latency import load_calibration_csv

    cal = load_calibration_csv(dst)
    assert cal.decode_latency(3) >= cal.decode_latency(1)
