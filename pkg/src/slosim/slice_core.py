"""Utility-driven task selection and decode-mask rate allocation.

The scheduler works in two phases.  Selection greedily admits tasks in
descending utility-per-token order while the estimated duration of one
scheduling period stays under the period budget (1000 ms by default, so
per-period token quotas equal per-second rates).  Rate allocation builds a
binary decode-mask matrix whose columns are decode iterations: row k holds a
ones-prefix of length v_k (the task's per-period token quota), and scanning
columns left to right batches exactly the tasks whose row is set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ContractViolation
from .latency import LatencyCalibration
from .workload import Task, required_rate

# Period budget under which one scheduling cycle must fit so that per-period
# quotas deliver at least the per-second rates.
PERIOD_BUDGET_MS = 1000.0

# Guards integer quota extraction against float noise in 1/tpot (e.g. a rate
# representing 10 tokens/s landing at 10.000000000000002).
_QUOTA_EPS = 1e-9


def token_quota(rate: float) -> int:
    """Per-period token quota for a required rate, rounded up, never zero."""
    return max(1, math.ceil(rate - _QUOTA_EPS))


@dataclass(frozen=True)
class UtilityRate:
    """Utility earned per generated token: the greedy selection key."""

    task_id: int
    rate: float


def utility_rate(utility: float, tpot_limit: float) -> float:
    """Utility per token: spreading task utility over its tokens per second."""
    if tpot_limit <= 0:
        raise ContractViolation(f"tpot_limit must be > 0, got {tpot_limit}")
    return utility * tpot_limit


def task_utility_rate(task: Task, utility_override: float | None = None) -> UtilityRate:
    u = task.utility if utility_override is None else utility_override
    return UtilityRate(task.id, utility_rate(u, task.slo.tpot_limit))


def estimate_period(rates: Sequence[float], model: LatencyCalibration) -> float:
    """Estimated wall time (ms) of one full mask-matrix scan.

    ``rates`` are required rates (tokens/s) sorted descending; they are
    rounded to integer quotas exactly as build_mask_matrix does.  The sum is
    accumulated column by column, in scan order, so the result is bit-identical
    to executing the corresponding matrix under the same model.
    """
    if not rates:
        return 0.0
    quotas = []
    prev = None
    for r in rates:
        if prev is not None and r > prev + 1e-12:
            raise ContractViolation("rates must be sorted in descending order")
        prev = r
        quotas.append(token_quota(r))
    width = quotas[0]
    total = 0.0
    for col in range(width):
        batch = 0
        for q in quotas:
            if q > col:
                batch += 1
            else:
                break  # quotas are non-increasing
        if batch == 0:
            break
        total += model.decode_latency(batch)
    return total


@dataclass(frozen=True)
class SelectionResult:
    """Greedy selection outcome; ids ordered by descending utility rate."""

    selected: tuple[int, ...]
    rejected: tuple[int, ...]
    estimated_period_ms: float


def select_tasks(
    candidates: Iterable[Task],
    model: LatencyCalibration,
    *,
    utilities: Mapping[int, float] | None = None,
    period_budget_ms: float = PERIOD_BUDGET_MS,
) -> SelectionResult:
    """Greedily admit tasks by utility rate under the period-budget gate.

    Tasks are tried in descending utility-rate order (ties broken by lower
    id).  Each tentative batch is re-sorted by required rate and costed with
    estimate_period; the first task that pushes the estimate to or beyond the
    budget is returned to the pool and selection stops.  ``utilities`` lets an
    adaptor override task utilities without mutating tasks.
    """

    def eff_utility(t: Task) -> float:
        if utilities is not None and t.id in utilities:
            return utilities[t.id]
        return t.utility

    order = sorted(
        candidates,
        key=lambda t: (-utility_rate(eff_utility(t), t.slo.tpot_limit), t.id),
    )
    selected: list[Task] = []
    sel_rates: list[float] = []
    period = 0.0
    cut = len(order)
    for i, task in enumerate(order):
        trial = sorted(sel_rates + [required_rate(task)], reverse=True)
        trial_period = estimate_period(trial, model)
        if trial_period >= period_budget_ms:
            cut = i
            break
        selected.append(task)
        sel_rates = trial
        period = trial_period
    return SelectionResult(
        selected=tuple(t.id for t in selected),
        rejected=tuple(t.id for t in order[cut:]),
        estimated_period_ms=period,
    )


@dataclass(frozen=True)
class DecodeMaskMatrix:
    """Binary per-period decode schedule.

    Row k (tasks ordered by required rate descending) is a ones-prefix of
    length ``row_quota[k]``; column j's batch is therefore the prefix of rows
    with quota > j.
    """

    row_order: tuple[int, ...]  # task ids
    row_quota: tuple[int, ...]  # non-increasing, all >= 1
    width: int  # == row_quota[0]

    def rows(self) -> list[list[int]]:
        """Materialized binary rows (mainly for inspection and tests)."""
        return [[1 if j < q else 0 for j in range(self.width)] for q in self.row_quota]

    def column_batch(self, col: int, live: set[int] | None = None) -> tuple[int, ...]:
        """Task ids decoding in column ``col``, optionally filtered to ``live``."""
        ids = []
        for tid, q in zip(self.row_order, self.row_quota):
            if q <= col:
                break  # non-increasing quotas: no later row is active either
            if live is None or tid in live:
                ids.append(tid)
        return tuple(ids)


def build_mask_matrix(selected: Sequence[Task]) -> DecodeMaskMatrix:
    """Construct the decode-mask matrix for a selected batch.

    Tasks are sorted by required rate descending (ties by lower id); the
    matrix is as wide as the fastest task's quota.
    """
    if not selected:
        raise ContractViolation("cannot build a mask matrix for an empty batch")
    order = sorted(selected, key=lambda t: (-required_rate(t), t.id))
    quotas = tuple(token_quota(required_rate(t)) for t in order)
    return DecodeMaskMatrix(
        row_order=tuple(t.id for t in order),
        row_quota=quotas,
        width=quotas[0],
    )


@dataclass(frozen=True)
class PeriodOutcome:
    survivors: frozenset[int]
    interrupted: bool
    iterations: int


def run_period(
    matrix: DecodeMaskMatrix,
    executor: Callable[[tuple[int, ...]], Iterable[int]],
    event_check: Callable[[], bool],
    live: Iterable[int] | None = None,
) -> PeriodOutcome:
    """Scan the matrix columns once, batching active rows per column.

    ``executor`` runs one decode iteration for the given batch and returns the
    ids of tasks that finished in it; finished tasks drop out of later columns.
    ``event_check`` is polled after every iteration; when it signals, the scan
    stops immediately and the surviving (unfinished) task set is returned.
    """
    alive = set(matrix.row_order if live is None else live)
    iterations = 0
    for col in range(matrix.width):
        batch = matrix.column_batch(col, alive)
        if not batch:
            break  # all remaining columns are empty prefixes as well
        finished = executor(batch)
        iterations += 1
        alive.difference_update(finished)
        if not alive:
            return PeriodOutcome(frozenset(), False, iterations)
        if event_check():
            return PeriodOutcome(frozenset(alive), True, iterations)
    return PeriodOutcome(frozenset(alive), False, iterations)


def slice_offline(
    tasks: Sequence[Task],
    model: LatencyCalibration,
    token_sink: Callable[[int, int, float], None],
    event_source,
    *,
    period_budget_ms: float = PERIOD_BUDGET_MS,
) -> frozenset[int]:
    """Offline scheduling run: select once, then scan periods to completion.

    All tasks are treated as present at time zero.  Selected tasks are
    prefilled in selection order (each prefill emits the task's first token),
    then mask-matrix periods repeat until every selected task finishes or
    ``event_source`` holds a message.  Emission times are reported through
    ``token_sink(task_id, token_index, time_s)``.  Returns the ids left
    unfinished: rejected tasks plus any selected task interrupted mid-run.
    """
    by_id = {t.id: t for t in tasks}
    if len(by_id) != len(tasks):
        raise ContractViolation("task ids must be unique")
    result = select_tasks(tasks, model, period_budget_ms=period_budget_ms)
    if not result.selected:
        return frozenset(result.rejected)

    clock = 0.0
    emitted = {tid: 0 for tid in result.selected}
    alive: set[int] = set()
    for tid in result.selected:
        task = by_id[tid]
        clock += model.prefill_latency(task.prompt_tokens) / 1000.0
        token_sink(tid, 0, clock)
        emitted[tid] = 1
        if task.output_tokens > 1:
            alive.add(tid)
    if not alive:
        return frozenset(result.rejected)

    matrix = build_mask_matrix([by_id[tid] for tid in result.selected])

    def executor(batch: tuple[int, ...]) -> list[int]:
        nonlocal clock
        clock += model.decode_latency(len(batch)) / 1000.0
        done = []
        for tid in batch:
            token_sink(tid, emitted[tid], clock)
            emitted[tid] += 1
            if emitted[tid] >= by_id[tid].output_tokens:
                done.append(tid)
        return done

    def event_check() -> bool:
        return not event_source.empty()

    while alive:
        outcome = run_period(matrix, executor, event_check, live=alive)
        alive = set(outcome.survivors)
        if outcome.interrupted:
            return frozenset(alive | set(result.rejected))
    return frozenset(result.rejected)
