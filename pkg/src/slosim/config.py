"""Experiment configuration: JSON loading, validation, and builders.

Errors raised here are ConfigurationError with a dotted field path so the
CLI can print a line-and-field diagnostic and exit with a usage error.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from .baselines import MlfqConfig, OrcaConfig
from .errors import ConfigurationError
from .latency import (
    LatencyCalibration,
    default_calibration,
    load_calibration_csv,
    DEFAULT_PREFILL_BASE_MS,
    DEFAULT_PREFILL_PER_TOKEN_MS,
)
from .sim import SCHEDULERS, UtilityAdaptorPolicy
from .workload import (
    DEFAULT_CLASSES,
    KIND_NRT,
    KIND_RT,
    Task,
    TaskClass,
    WorkloadSpec,
    generate,
    static_reference_scenario,
)

WORKLOAD_POISSON = "poisson"
WORKLOAD_STATIC = "static_reference"

AXIS_RATE = "rate"
AXIS_RATIO = "ratio"
AXIS_COLUMN = {AXIS_RATE: "arrival_rate", AXIS_RATIO: "rt_fraction"}


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigurationError(f"{path}.{key}: required field is missing")
    return mapping[key]


def _check_type(value, types, path: str):
    if not isinstance(value, types):
        names = types.__name__ if not isinstance(types, tuple) else "/".join(t.__name__ for t in types)
        raise ConfigurationError(f"{path}: expected {names}, got {value!r}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _int_pair(value, path: str) -> tuple[int, int]:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ConfigurationError(f"{path}: expected [low, high] integers, got {value!r}")
    return (value[0], value[1])


def _parse_class(obj: dict, path: str) -> TaskClass:
    kind = _require(obj, "kind", path)
    if kind not in (KIND_RT, KIND_NRT):
        raise ConfigurationError(f"{path}.kind: must be {KIND_RT!r} or {KIND_NRT!r}")
    common = dict(
        label=str(_require(obj, "label", path)),
        kind=kind,
        utility=_number(_require(obj, "utility", path), f"{path}.utility"),
        prompt_tokens=_int_pair(_require(obj, "prompt_tokens", path), f"{path}.prompt_tokens"),
        output_tokens=_int_pair(_require(obj, "output_tokens", path), f"{path}.output_tokens"),
        weight=_number(obj.get("weight", 1.0), f"{path}.weight"),
    )
    try:
        if kind == KIND_RT:
            return TaskClass(
                **common,
                rate=_number(_require(obj, "rate", path), f"{path}.rate"),
                deadline=_number(_require(obj, "deadline", path), f"{path}.deadline"),
            )
        return TaskClass(
            **common,
            tpot_limit=_number(_require(obj, "tpot_limit", path), f"{path}.tpot_limit"),
            ttft_limit=_number(_require(obj, "ttft_limit", path), f"{path}.ttft_limit"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    workload_kind: str
    arrival_rate: float
    rt_fraction: float
    task_count: int | None
    duration: float | None
    classes: tuple[TaskClass, ...]
    model: LatencyCalibration
    schedulers: tuple[str, ...]
    seeds: tuple[int, ...]
    adaptor: UtilityAdaptorPolicy
    orca: OrcaConfig
    fastserve: MlfqConfig
    period_budget_ms: float
    sweep: SweepSpec | None
    horizon: float | None
    output_dir: str
    verbose_log: bool
    fingerprint: str

    def build_tasks(
        self,
        seed: int,
        arrival_rate: float | None = None,
        rt_fraction: float | None = None,
    ) -> list[Task]:
        if self.workload_kind == WORKLOAD_STATIC:
            return static_reference_scenario()
        spec = WorkloadSpec(
            arrival_rate=self.arrival_rate if arrival_rate is None else arrival_rate,
            rt_fraction=self.rt_fraction if rt_fraction is None else rt_fraction,
            rng_seed=seed,
            task_count=self.task_count,
            duration=self.duration,
            classes=self.classes,
        )
        return generate(spec)


_TOP_LEVEL_KEYS = {
    "workload",
    "latency",
    "schedulers",
    "seeds",
    "adaptor",
    "slice",
    "orca",
    "fastserve",
    "sweep",
    "horizon_s",
    "output_dir",
    "verbose_log",
}


def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config fields: {', '.join(sorted(unknown))}")

    wl = _check_type(_require(raw, "workload", "config"), dict, "workload")
    kind = wl.get("kind", WORKLOAD_POISSON)
    if kind not in (WORKLOAD_POISSON, WORKLOAD_STATIC):
        raise ConfigurationError(
            f"workload.kind: expected {WORKLOAD_POISSON!r} or {WORKLOAD_STATIC!r}, got {kind!r}"
        )
    arrival_rate = _number(wl.get("arrival_rate", 1.0), "workload.arrival_rate")
    rt_fraction = _number(wl.get("rt_fraction", 0.7), "workload.rt_fraction")
    task_count = wl.get("task_count")
    duration = wl.get("duration")
    if kind == WORKLOAD_POISSON:
        if task_count is None and duration is None:
            task_count = 300
        if task_count is not None:
            task_count = int(_number(task_count, "workload.task_count"))
        if duration is not None:
            duration = _number(duration, "workload.duration")
    if "classes" in wl and wl["classes"] is not None:
        classes_raw = _check_type(wl["classes"], list, "workload.classes")
        classes = tuple(
            _parse_class(_check_type(c, dict, f"workload.classes[{i}]"), f"workload.classes[{i}]")
            for i, c in enumerate(classes_raw)
        )
    else:
        classes = DEFAULT_CLASSES

    lat = raw.get("latency", {})
    _check_type(lat, dict, "latency")
    prefill_base = _number(lat.get("prefill_base_ms", DEFAULT_PREFILL_BASE_MS), "latency.prefill_base_ms")
    prefill_pt = _number(
        lat.get("prefill_per_token_ms", DEFAULT_PREFILL_PER_TOKEN_MS), "latency.prefill_per_token_ms"
    )
    source = lat.get("calibration", "default")
    try:
        if source == "default":
            model = default_calibration(prefill_base, prefill_pt)
        elif isinstance(source, str):
            path = source if os.path.isabs(source) else os.path.join(base_dir, source)
            if not os.path.exists(path):
                raise ConfigurationError(f"latency.calibration: file not found: {path}")
            model = load_calibration_csv(path, prefill_base, prefill_pt)
        elif isinstance(source, list):
            points = tuple((int(b), float(l)) for b, l in source)
            model = LatencyCalibration(points, prefill_base, prefill_pt)
        else:
            raise ConfigurationError(f"latency.calibration: unsupported value {source!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"latency.calibration: {exc}") from exc

    schedulers = raw.get("schedulers", list(SCHEDULERS))
    _check_type(schedulers, list, "schedulers")
    for s in schedulers:
        if s not in SCHEDULERS:
            raise ConfigurationError(
                f"schedulers: unknown scheduler {s!r}; valid choices: {', '.join(SCHEDULERS)}"
            )
    if not schedulers:
        raise ConfigurationError("schedulers: must not be empty")

    seeds = raw.get("seeds", [1, 2, 3, 4, 5])
    _check_type(seeds, list, "seeds")
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigurationError("seeds: expected a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("seeds: values must be distinct")

    ad = raw.get("adaptor", {})
    _check_type(ad, dict, "adaptor")
    policy = ad.get("policy", "identity")
    try:
        adaptor = UtilityAdaptorPolicy(
            kind=policy,
            decay_rate=_number(ad.get("decay_rate", 0.5), "adaptor.decay_rate"),
            pin_ids=frozenset(ad.get("pin_ids", ())),
            pin_boost=_number(ad.get("pin_boost", 10.0), "adaptor.pin_boost"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"adaptor: {exc}") from exc

    sl = raw.get("slice", {})
    _check_type(sl, dict, "slice")
    period_budget_ms = _number(sl.get("period_budget_ms", 1000.0), "slice.period_budget_ms")
    if period_budget_ms <= 0:
        raise ConfigurationError("slice.period_budget_ms: must be > 0")

    oc = raw.get("orca", {})
    _check_type(oc, dict, "orca")
    try:
        orca = OrcaConfig(max_batch=oc.get("max_batch"))
    except ConfigurationError as exc:
        raise ConfigurationError(f"orca: {exc}") from exc

    fs = raw.get("fastserve", {})
    _check_type(fs, dict, "fastserve")
    try:
        fastserve = MlfqConfig(
            num_queues=int(_number(fs.get("num_queues", 4), "fastserve.num_queues")),
            base_quantum=int(_number(fs.get("base_quantum", 16), "fastserve.base_quantum")),
            quantum_growth=int(_number(fs.get("quantum_growth", 2), "fastserve.quantum_growth")),
            max_batch=fs.get("max_batch"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"fastserve: {exc}") from exc

    sweep = None
    if raw.get("sweep") is not None:
        sw = _check_type(raw["sweep"], dict, "sweep")
        axis = _require(sw, "axis", "sweep")
        if axis not in (AXIS_RATE, AXIS_RATIO):
            raise ConfigurationError(f"sweep.axis: expected {AXIS_RATE!r} or {AXIS_RATIO!r}, got {axis!r}")
        values = _check_type(_require(sw, "values", "sweep"), list, "sweep.values")
        if not values:
            raise ConfigurationError("sweep.values: must not be empty")
        values = tuple(_number(v, "sweep.values") for v in values)
        if axis == AXIS_RATIO and not all(0.0 <= v <= 1.0 for v in values):
            raise ConfigurationError("sweep.values: rt_fraction values must lie in [0, 1]")
        sweep = SweepSpec(axis=axis, values=values)

    horizon = raw.get("horizon_s")
    if horizon is not None:
        horizon = _number(horizon, "horizon_s")

    fingerprint = hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()

    return ExperimentConfig(
        workload_kind=kind,
        arrival_rate=arrival_rate,
        rt_fraction=rt_fraction,
        task_count=task_count,
        duration=duration,
        classes=classes,
        model=model,
        schedulers=tuple(schedulers),
        seeds=tuple(seeds),
        adaptor=adaptor,
        orca=orca,
        fastserve=fastserve,
        period_budget_ms=period_budget_ms,
        sweep=sweep,
        horizon=horizon,
        output_dir=str(raw.get("output_dir", "out")),
        verbose_log=bool(raw.get("verbose_log", False)),
        fingerprint=fingerprint,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))
