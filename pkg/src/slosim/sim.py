"""Deterministic single-pipeline simulation engine hosting the schedulers.

The modeled GPU executes one blocking step at a time: a prefill pass or one
decode iteration.  Prefill runs eagerly when a task arrives (admission to the
request buffer) and emits the task's first token; decode scheduling only ever
sees prefilled tasks.  Schedulers learn about arrivals, readiness, and
completions strictly at step boundaries, so preemption happens at decode
iteration granularity and never mid-iteration.

The utility-driven scheduler runs its offline pipeline cyclically: any
readiness or completion posts a reschedule message, the in-flight iteration
finishes, utilities pass through the adaptor, and selection restarts over all
unfinished tasks.  Tasks keep already-emitted tokens across restarts.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import metrics
from .baselines import MlfqConfig, OrcaConfig, fastserve_step, orca_step, should_demote, skip_join_level
from .errors import ConfigurationError
from .latency import LatencyCalibration
from .slice_core import PERIOD_BUDGET_MS, build_mask_matrix, select_tasks
from .workload import Task

SCHEDULER_SLICE = "slice"
SCHEDULER_ORCA = "orca"
SCHEDULER_FASTSERVE = "fastserve"
SCHEDULERS = (SCHEDULER_SLICE, SCHEDULER_ORCA, SCHEDULER_FASTSERVE)

EVENT_ARRIVAL = "arrival"
EVENT_ITERATION_DONE = "decode_iteration_done"
EVENT_TASK_COMPLETED = "task_completed"
EVENT_RESCHEDULE = "reschedule"

DEFAULT_DRAIN_WINDOW_S = 120.0


@dataclass(frozen=True)
class SimEvent:
    """One simulator event, ordered by (time, kind rank, task id)."""

    time: float
    kind: str
    task_id: int | None = None
    batch_size: int | None = None

    def log_line(self) -> str:
        tid = "" if self.task_id is None else str(self.task_id)
        bs = "" if self.batch_size is None else str(self.batch_size)
        return f"{self.time:.9f}\t{self.kind}\t{tid}\t{bs}"


@dataclass(frozen=True)
class TokenRecord:
    """One emitted token; indices are contiguous from 0 per task."""

    task_id: int
    token_index: int
    emit_time: float


class EventQueue:
    """Multi-producer single-consumer message box.

    Any producer may post messages concurrently; the scheduling loop polls it
    between decode iterations only.  Within the simulator it carries the
    reschedule signal; the kind field is kept for external producers.
    """

    def __init__(self):
        self._messages = deque()
        self._lock = threading.Lock()

    def post(self, message) -> None:
        with self._lock:
            self._messages.append(message)

    def poll(self):
        with self._lock:
            return self._messages.popleft() if self._messages else None

    def empty(self) -> bool:
        with self._lock:
            return not self._messages


@dataclass(frozen=True)
class UtilityAdaptorPolicy:
    """How the preemption controller rewrites utilities at every restart."""

    kind: str = "identity"  # identity | long_task_decay | pin
    decay_rate: float = 0.5
    pin_ids: frozenset = frozenset()
    pin_boost: float = 10.0

    def __post_init__(self):
        if self.kind not in ("identity", "long_task_decay", "pin"):
            raise ConfigurationError(f"unknown adaptor policy {self.kind!r}")
        if self.decay_rate <= 0:
            raise ConfigurationError("decay_rate must be > 0")
        if self.pin_boost <= 0:
            raise ConfigurationError("pin_boost must be > 0")


IDENTITY_ADAPTOR = UtilityAdaptorPolicy()


def apply_adaptor(policy: UtilityAdaptorPolicy, task_states: Iterable[tuple[Task, int]]) -> dict[int, float]:
    """Map (task, emitted token count) pairs to adapted utilities (always >= 0).

    Decay recomputes from the task's base utility each time, so repeated
    restarts do not compound.
    """
    out: dict[int, float] = {}
    for task, emitted in task_states:
        u = task.utility
        if policy.kind == "long_task_decay":
            u = u * policy.decay_rate ** (emitted / 100.0)
        elif policy.kind == "pin" and task.id in policy.pin_ids:
            u = u * policy.pin_boost
        out[task.id] = max(0.0, u)
    return out


class RuntimeTask:
    """Mutable per-run state wrapped around an immutable Task."""

    __slots__ = ("task", "records", "done", "ready_time", "level", "tokens_at_level")

    def __init__(self, task: Task):
        self.task = task
        self.records: list[TokenRecord] = []
        self.done = False
        self.ready_time: float | None = None
        self.level = 0
        self.tokens_at_level = 0

    # attribute views used by the pure baseline step functions
    @property
    def id(self) -> int:
        return self.task.id

    @property
    def arrival(self) -> float:
        return self.task.arrival

    @property
    def emitted(self) -> int:
        return len(self.records)

    def emit(self, t: float) -> None:
        self.records.append(TokenRecord(self.task.id, len(self.records), t))
        if len(self.records) >= self.task.output_tokens:
            self.done = True


STEP_PREFILL = "prefill"
STEP_DECODE = "decode"


@dataclass(frozen=True)
class Step:
    kind: str
    duration: float  # seconds
    batch: tuple  # RuntimeTask objects (single-element for prefill)


class _SliceStrategy:
    """Online loop: cyclic selection + mask-matrix column scanning."""

    def __init__(self, model, adaptor, period_budget_ms, log_event):
        self.model = model
        self.adaptor = adaptor
        self.period_budget_ms = period_budget_ms
        self._log = log_event
        self.pool: list[RuntimeTask] = []  # ready, unfinished, unscheduled
        self.live: dict[int, RuntimeTask] = {}  # current session tasks
        self.matrix = None
        self.col = 0
        self.resched = False

    def _post_reschedule(self, now: float, task_id: int) -> None:
        # coincident triggers coalesce into one reschedule message
        if not self.resched:
            self.resched = True
            self._log(SimEvent(now, EVENT_RESCHEDULE, task_id=task_id))

    def on_ready(self, rt: RuntimeTask, now: float) -> None:
        self.pool.append(rt)
        self._post_reschedule(now, rt.id)

    def on_step_done(self, step: Step, completed: list[int], now: float) -> None:
        for tid in completed:
            self.live.pop(tid, None)
        if completed:
            self._post_reschedule(now, completed[0])

    def _reselect(self, now: float) -> None:
        self.resched = False
        candidates = self.pool + list(self.live.values())
        self.pool = []
        self.live = {}
        self.matrix = None
        self.col = 0
        if not candidates:
            return
        by_id = {rt.id: rt for rt in candidates}
        utilities = apply_adaptor(self.adaptor, [(rt.task, rt.emitted) for rt in candidates])
        result = select_tasks(
            [rt.task for rt in candidates],
            self.model,
            utilities=utilities,
            period_budget_ms=self.period_budget_ms,
        )
        self.pool = [by_id[tid] for tid in result.rejected]
        if result.selected:
            selected = [by_id[tid] for tid in result.selected]
            self.live = {rt.id: rt for rt in selected}
            self.matrix = build_mask_matrix([rt.task for rt in selected])
            self.col = 0

    def next_decode_step(self, now: float):
        if self.resched:
            self._reselect(now)
        if self.matrix is None or not self.live:
            self.matrix = None
            return None
        alive = set(self.live)
        while True:
            if self.col >= self.matrix.width:
                self.col = 0  # period complete: rescan from the left
            batch_ids = self.matrix.column_batch(self.col, alive)
            if batch_ids:
                self.col += 1
                rts = tuple(self.live[tid] for tid in batch_ids)
                latency_s = self.model.decode_latency(len(rts)) / 1000.0
                return Step(STEP_DECODE, latency_s, rts)
            if self.col == 0:
                self.matrix = None  # no live rows at all
                return None
            self.col = 0  # rest of this period is empty: wrap early

    def unfinished(self) -> list[RuntimeTask]:
        return self.pool + list(self.live.values())


class _OrcaStrategy:
    """Iteration-level FCFS dynamic batching."""

    def __init__(self, model, cfg: OrcaConfig, log_event):
        self.model = model
        self.cfg = cfg
        self.active: list[RuntimeTask] = []
        self.waiting: list[RuntimeTask] = []

    def on_ready(self, rt: RuntimeTask, now: float) -> None:
        self.waiting.append(rt)

    def on_step_done(self, step: Step, completed: list[int], now: float) -> None:
        if completed:
            gone = set(completed)
            self.active = [rt for rt in self.active if rt.id not in gone]

    def next_decode_step(self, now: float):
        plan = orca_step(self.active, self.waiting, self.cfg, self.model)
        if not plan.batch:
            return None
        if plan.admit:
            admit = set(plan.admit)
            admitted = [rt for rt in self.waiting if rt.id in admit]
            self.waiting = [rt for rt in self.waiting if rt.id not in admit]
            self.active.extend(admitted)
        by_id = {rt.id: rt for rt in self.active}
        rts = tuple(by_id[tid] for tid in plan.batch)
        return Step(STEP_DECODE, plan.latency_ms / 1000.0, rts)

    def unfinished(self) -> list[RuntimeTask]:
        return self.active + self.waiting


class _FastServeStrategy:
    """Skip-join MLFQ with iteration-level preemption."""

    def __init__(self, model, cfg: MlfqConfig, log_event):
        self.model = model
        self.cfg = cfg
        self.levels: list[list[RuntimeTask]] = [[] for _ in range(cfg.num_queues)]

    def on_ready(self, rt: RuntimeTask, now: float) -> None:
        rt.level = skip_join_level(rt.task.prompt_tokens, self.cfg)
        rt.tokens_at_level = 0
        self.levels[rt.level].append(rt)

    def on_step_done(self, step: Step, completed: list[int], now: float) -> None:
        gone = set(completed)
        demote: list[RuntimeTask] = []
        for rt in step.batch:
            if rt.id in gone:
                self.levels[rt.level] = [x for x in self.levels[rt.level] if x.id != rt.id]
                continue
            rt.tokens_at_level += 1
            if should_demote(rt.tokens_at_level, rt.level, self.cfg):
                demote.append(rt)
        for rt in demote:
            self.levels[rt.level] = [x for x in self.levels[rt.level] if x.id != rt.id]
            rt.level += 1
            rt.tokens_at_level = 0
            self.levels[rt.level].append(rt)

    def next_decode_step(self, now: float):
        plan = fastserve_step(self.levels, self.cfg, self.model)
        if not plan.batch:
            return None
        by_id = {rt.id: rt for level in self.levels for rt in level}
        rts = tuple(by_id[tid] for tid in plan.batch)
        return Step(STEP_DECODE, plan.latency_ms / 1000.0, rts)

    def unfinished(self) -> list[RuntimeTask]:
        return [rt for level in self.levels for rt in level]


def _make_strategy(name, model, adaptor, orca_cfg, mlfq_cfg, period_budget_ms, log_event):
    if name == SCHEDULER_SLICE:
        return _SliceStrategy(model, adaptor, period_budget_ms, log_event)
    if name == SCHEDULER_ORCA:
        return _OrcaStrategy(model, orca_cfg or OrcaConfig(), log_event)
    if name == SCHEDULER_FASTSERVE:
        return _FastServeStrategy(model, mlfq_cfg or MlfqConfig(), log_event)
    raise ConfigurationError(f"unknown scheduler {name!r}; valid choices: {', '.join(SCHEDULERS)}")


@dataclass
class SimulationResult:
    records: dict[int, list[TokenRecord]]
    events: list[SimEvent]
    iteration_batches: list[tuple[int, ...]]  # decode batch compositions, in order


def simulate(
    tasks: Sequence[Task],
    scheduler: str,
    model: LatencyCalibration,
    adaptor: UtilityAdaptorPolicy = IDENTITY_ADAPTOR,
    *,
    horizon: float | None = None,
    orca_cfg: OrcaConfig | None = None,
    mlfq_cfg: MlfqConfig | None = None,
    period_budget_ms: float = PERIOD_BUDGET_MS,
) -> SimulationResult:
    """Run one deterministic simulation and return raw records and events."""
    ordered = sorted(tasks, key=lambda t: (t.arrival, t.id))
    if any(t.arrival < 0 for t in ordered):
        raise ConfigurationError("task arrivals must be non-negative")
    if horizon is None:
        horizon = (ordered[-1].arrival + DEFAULT_DRAIN_WINDOW_S) if ordered else 0.0

    events: list[SimEvent] = []
    iteration_batches: list[tuple[int, ...]] = []
    strategy = _make_strategy(
        scheduler, model, adaptor, orca_cfg, mlfq_cfg, period_budget_ms, events.append
    )

    rts = [RuntimeTask(t) for t in ordered]
    incoming = deque(rts)
    prefill_q: deque[RuntimeTask] = deque()
    now = 0.0

    def deliver(upto: float) -> None:
        while incoming and incoming[0].task.arrival <= upto:
            rt = incoming.popleft()
            events.append(SimEvent(rt.task.arrival, EVENT_ARRIVAL, task_id=rt.id))
            prefill_q.append(rt)

    deliver(now)
    while True:
        if now >= horizon:
            break
        if prefill_q:
            rt = prefill_q.popleft()
            duration = model.prefill_latency(rt.task.prompt_tokens) / 1000.0
            end = now + duration
            now = end
            deliver(now)
            rt.emit(end)  # prefill produces the first token
            if rt.done:
                events.append(SimEvent(end, EVENT_TASK_COMPLETED, task_id=rt.id))
            else:
                rt.ready_time = end
                strategy.on_ready(rt, end)
            continue
        step = strategy.next_decode_step(now)
        if step is None:
            if incoming:
                now = max(now, incoming[0].task.arrival)
                deliver(now)
                continue
            break
        end = now + step.duration
        now = end
        deliver(now)
        completed: list[int] = []
        for rt in step.batch:
            rt.emit(end)
            if rt.done:
                completed.append(rt.id)
        events.append(SimEvent(end, EVENT_ITERATION_DONE, batch_size=len(step.batch)))
        iteration_batches.append(tuple(rt.id for rt in step.batch))
        for tid in completed:
            events.append(SimEvent(end, EVENT_TASK_COMPLETED, task_id=tid))
        strategy.on_step_done(step, completed, end)

    return SimulationResult(
        records={rt.id: rt.records for rt in rts},
        events=events,
        iteration_batches=iteration_batches,
    )


def run_simulation(
    tasks: Sequence[Task],
    scheduler: str,
    model: LatencyCalibration,
    adaptor: UtilityAdaptorPolicy = IDENTITY_ADAPTOR,
    *,
    horizon: float | None = None,
    orca_cfg: OrcaConfig | None = None,
    mlfq_cfg: MlfqConfig | None = None,
    period_budget_ms: float = PERIOD_BUDGET_MS,
    seed: int | None = None,
) -> "metrics.RunReport":
    """Simulate and score: returns the full run report (identical inputs,
    identical report)."""
    sim = simulate(
        tasks,
        scheduler,
        model,
        adaptor,
        horizon=horizon,
        orca_cfg=orca_cfg,
        mlfq_cfg=mlfq_cfg,
        period_budget_ms=period_budget_ms,
    )
    return metrics.build_report(tasks, sim.records, scheduler=scheduler, seed=seed)
