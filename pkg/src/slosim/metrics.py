"""Per-task SLO scoring and aggregate attainment statistics.

A real-time task is satisfied exactly when it completes within its deadline.
A non-real-time task is satisfied when it completes with both its TTFT and
its mean TPOT within their limits.  TPOT is the mean inter-token interval,
excluding the time to the first token; single-token outputs satisfy TPOT
vacuously.  All boundary comparisons are inclusive.  Unfinished tasks are
counted as violated, so attainment can only be understated.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from .errors import ContractViolation
from .workload import KIND_NRT, KIND_RT, Task

CAUSE_NONE = "none"
CAUSE_TTFT = "ttft"
CAUSE_TPOT = "tpot"
CAUSE_DEADLINE = "deadline"
CAUSE_UNFINISHED = "unfinished"


@dataclass(frozen=True)
class TaskOutcome:
    task_id: int
    kind: str
    label: str
    arrival: float
    prompt_tokens: int
    output_tokens: int
    utility: float
    tpot_limit: float
    ttft_limit: float
    deadline: float | None
    tokens_emitted: int
    completed: bool
    t_ttft: float | None  # first emit - arrival
    mean_tpot: float | None  # (last emit - first emit) / (tokens - 1)
    realized_rate: float | None  # 1 / mean_tpot
    completion_time: float | None  # last emit - arrival, completed tasks only
    satisfied: bool
    violation_cause: str
    ttft_attained: bool
    tpot_attained: bool


def score_task(task: Task, records: Sequence) -> TaskOutcome:
    """Score one task from its time-ordered token records."""
    prev = None
    for rec in records:
        if prev is not None and rec.emit_time <= prev:
            raise ContractViolation(
                f"task {task.id}: token records must be strictly time-ordered"
            )
        prev = rec.emit_time

    n = len(records)
    completed = n == task.output_tokens
    t_ttft = records[0].emit_time - task.arrival if n >= 1 else None
    mean_tpot = None
    if n >= 2:
        mean_tpot = (records[-1].emit_time - records[0].emit_time) / (n - 1)
    realized_rate = (1.0 / mean_tpot) if mean_tpot else None
    completion_time = (records[-1].emit_time - task.arrival) if completed else None

    ttft_attained = t_ttft is not None and t_ttft <= task.slo.ttft_limit
    if mean_tpot is not None:
        tpot_attained = mean_tpot <= task.slo.tpot_limit
    else:
        tpot_attained = completed  # single-token outputs: no interval exists

    if not completed:
        cause = CAUSE_UNFINISHED
    elif task.kind == KIND_RT:
        cause = CAUSE_NONE if completion_time <= task.slo.deadline else CAUSE_DEADLINE
    else:
        if not ttft_attained:
            cause = CAUSE_TTFT
        elif not tpot_attained:
            cause = CAUSE_TPOT
        else:
            cause = CAUSE_NONE

    return TaskOutcome(
        task_id=task.id,
        kind=task.kind,
        label=task.label,
        arrival=task.arrival,
        prompt_tokens=task.prompt_tokens,
        output_tokens=task.output_tokens,
        utility=task.utility,
        tpot_limit=task.slo.tpot_limit,
        ttft_limit=task.slo.ttft_limit,
        deadline=task.slo.deadline,
        tokens_emitted=n,
        completed=completed,
        t_ttft=t_ttft,
        mean_tpot=mean_tpot,
        realized_rate=realized_rate,
        completion_time=completion_time,
        satisfied=cause == CAUSE_NONE,
        violation_cause=cause,
        ttft_attained=ttft_attained,
        tpot_attained=tpot_attained,
    )


@dataclass(frozen=True)
class GroupStats:
    tasks: int
    completed: int
    slo_attainment: float | None
    ttft_attainment: float | None
    tpot_attainment: float | None
    mean_completion_time: float | None  # over completed tasks


@dataclass(frozen=True)
class Aggregates:
    overall: GroupStats
    rt: GroupStats
    nrt: GroupStats
    total_utility: float


GROUP_NAMES = ("overall", "rt", "nrt")


def _group_stats(outcomes: Sequence[TaskOutcome]) -> GroupStats:
    n = len(outcomes)
    if n == 0:
        return GroupStats(0, 0, None, None, None, None)
    completed = [o for o in outcomes if o.completed]
    ct = [o.completion_time for o in completed]
    return GroupStats(
        tasks=n,
        completed=len(completed),
        slo_attainment=sum(o.satisfied for o in outcomes) / n,
        ttft_attainment=sum(o.ttft_attained for o in outcomes) / n,
        tpot_attainment=sum(o.tpot_attained for o in outcomes) / n,
        mean_completion_time=(sum(ct) / len(ct)) if ct else None,
    )


def aggregate(outcomes: Sequence[TaskOutcome]) -> Aggregates:
    """Aggregate per-task outcomes; permutation-invariant over the input."""
    ordered = sorted(outcomes, key=lambda o: o.task_id)
    rt = [o for o in ordered if o.kind == KIND_RT]
    nrt = [o for o in ordered if o.kind == KIND_NRT]
    return Aggregates(
        overall=_group_stats(ordered),
        rt=_group_stats(rt),
        nrt=_group_stats(nrt),
        total_utility=sum(o.utility for o in ordered if o.satisfied),
    )


@dataclass(frozen=True)
class RunReport:
    scheduler: str
    seed: int | None
    outcomes: tuple[TaskOutcome, ...]  # sorted by task id
    aggregates: Aggregates


def build_report(
    tasks: Sequence[Task],
    records: Mapping[int, Sequence],
    scheduler: str,
    seed: int | None = None,
) -> RunReport:
    outcomes = tuple(
        score_task(t, records.get(t.id, ())) for t in sorted(tasks, key=lambda t: t.id)
    )
    return RunReport(
        scheduler=scheduler,
        seed=seed,
        outcomes=outcomes,
        aggregates=aggregate(outcomes),
    )


def report_to_json(report: RunReport) -> str:
    """Deterministic nested-JSON serialization (sorted keys, repr floats)."""
    payload = {
        "scheduler": report.scheduler,
        "seed": report.seed,
        "aggregates": {
            "total_utility": report.aggregates.total_utility,
            "overall": asdict(report.aggregates.overall),
            "rt": asdict(report.aggregates.rt),
            "nrt": asdict(report.aggregates.nrt),
        },
        "outcomes": [asdict(o) for o in report.outcomes],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# Flat CSV schema: one row per task, then one summary row per group.  Pinned
# by a golden test; document changes in docs/report_schema.md.
CSV_COLUMNS = (
    "row_type",
    "task_id",
    "kind",
    "label",
    "arrival_s",
    "prompt_tokens",
    "output_tokens",
    "utility",
    "tpot_limit_s",
    "ttft_limit_s",
    "deadline_s",
    "tokens_emitted",
    "completed",
    "ttft_s",
    "mean_tpot_s",
    "realized_rate_tps",
    "completion_time_s",
    "satisfied",
    "violation_cause",
    "slo_attainment",
    "ttft_attainment",
    "tpot_attainment",
    "mean_completion_time_s",
    "total_utility",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for o in report.outcomes:
        writer.writerow(
            [
                "task",
                o.task_id,
                o.kind,
                o.label,
                _cell(o.arrival),
                o.prompt_tokens,
                o.output_tokens,
                _cell(o.utility),
                _cell(o.tpot_limit),
                _cell(o.ttft_limit),
                _cell(o.deadline),
                o.tokens_emitted,
                _cell(o.completed),
                _cell(o.t_ttft),
                _cell(o.mean_tpot),
                _cell(o.realized_rate),
                _cell(o.completion_time),
                _cell(o.satisfied),
                o.violation_cause,
                "",
                "",
                "",
                "",
                "",
            ]
        )
    groups = {
        "rt": report.aggregates.rt,
        "nrt": report.aggregates.nrt,
        "overall": report.aggregates.overall,
    }
    for name in ("rt", "nrt", "overall"):
        g = groups[name]
        writer.writerow(
            [
                "summary",
                "",
                name,
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                "",
                _cell(g.slo_attainment),
                _cell(g.ttft_attainment),
                _cell(g.tpot_attainment),
                _cell(g.mean_completion_time),
                _cell(report.aggregates.total_utility if name == "overall" else None),
            ]
        )
    return buf.getvalue()
