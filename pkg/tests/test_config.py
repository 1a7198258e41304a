import json

import pytest

from slosim.config import load_config, parse_config
from slosim.errors import ConfigurationError
from slosim.workload import KIND_NRT, KIND_RT


def minimal(**over):
    cfg = {"workload": {"kind": "poisson", "arrival_rate": 1.0, "rt_fraction": 0.5, "task_count": 10}}
    cfg.update(over)
    return cfg


def test_defaults_applied():
    cfg = parse_config(minimal())
    assert cfg.schedulers == ("slice", "orca", "fastserve")
    assert cfg.seeds == (1, 2, 3, 4, 5)
    assert cfg.adaptor.kind == "identity"
    assert cfg.period_budget_ms == 1000.0
    assert cfg.model.decode_latency(9) == 128.59


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigurationError, match="unknown config fields"):
        parse_config(minimal(wrokload={}))


def test_missing_workload_rejected():
    with pytest.raises(ConfigurationError, match="workload"):
        parse_config({})


def test_custom_classes_parsed():
    classes = [
        {
            "label": "ctrl", "kind": KIND_RT, "utility": 50, "prompt_tokens": [8, 16],
            "output_tokens": [5, 10], "rate": 20, "deadline": 1.5,
        },
        {
            "label": "chat", "kind": KIND_NRT, "utility": 1, "prompt_tokens": [16, 32],
            "output_tokens": [50, 80], "tpot_limit": 0.125, "ttft_limit": 2.0,
        },
    ]
    cfg = parse_config(minimal(workload={
        "kind": "poisson", "arrival_rate": 1.0, "rt_fraction": 0.5,
        "task_count": 10, "classes": classes,
    }))
    assert [c.label for c in cfg.classes] == ["ctrl", "chat"]
    tasks = cfg.build_tasks(seed=3)
    assert {t.label for t in tasks} <= {"ctrl", "chat"}


def test_class_missing_field_names_path():
    classes = [{"label": "x", "kind": KIND_RT, "utility": 1,
                "prompt_tokens": [1, 2], "output_tokens": [1, 2], "rate": 20}]
    with pytest.raises(ConfigurationError, match="deadline"):
        parse_config(minimal(workload={"kind": "poisson", "task_count": 5, "classes": classes}))


def test_inline_calibration_points():
    cfg = parse_config(minimal(latency={"calibration": [[1, 50.0], [9, 130.0]]}))
    assert cfg.model.decode_latency(5) == pytest.approx(90.0)


def test_sweep_ratio_bounds_checked():
    with pytest.raises(ConfigurationError, match="rt_fraction"):
        parse_config(minimal(sweep={"axis": "ratio", "values": [0.5, 1.5]}))


def test_sweep_axis_validated():
    with pytest.raises(ConfigurationError, match="sweep.axis"):
        parse_config(minimal(sweep={"axis": "speed", "values": [1.0]}))


def test_duplicate_seeds_rejected():
    with pytest.raises(ConfigurationError, match="distinct"):
        parse_config(minimal(seeds=[1, 1, 2]))


def test_adaptor_parsing():
    cfg = parse_config(minimal(adaptor={"policy": "long_task_decay", "decay_rate": 0.8}))
    assert cfg.adaptor.kind == "long_task_decay"
    assert cfg.adaptor.decay_rate == 0.8
    cfg = parse_config(minimal(adaptor={"policy": "pin", "pin_ids": [3, 4], "pin_boost": 5}))
    assert cfg.adaptor.pin_ids == frozenset({3, 4})


def test_fingerprint_tracks_content():
    a = parse_config(minimal())
    b = parse_config(minimal(seeds=[1, 2]))
    assert a.fingerprint != b.fingerprint
    assert a.fingerprint == parse_config(minimal()).fingerprint


def test_load_config_relative_calibration(tmp_path):
    cal = tmp_path / "cal.csv"
    cal.write_text("batch,latency_ms\n1,40\n9,128.59\n")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(minimal(latency={"calibration": "cal.csv"})))
    cfg = load_config(str(cfg_path))
    assert cfg.model.decode_latency(9) == 128.59


def test_static_workload_ignores_seed():
    cfg = parse_config(minimal(workload={"kind": "static_reference"}))
    assert cfg.build_tasks(seed=1) == cfg.build_tasks(seed=99)
