"""Reference schedulers: FCFS dynamic batching and a skip-join MLFQ.

Both are expressed as pure step functions over explicit state so a hosting
simulation (or test) owns time and bookkeeping.  Each step plans one decode
iteration: which waiting tasks to admit and which tasks to batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigurationError
from .latency import LatencyCalibration


@dataclass(frozen=True)
class OrcaConfig:
    """Dynamic batching config; max_batch=None means unbounded."""

    max_batch: int | None = None

    def __post_init__(self):
        if self.max_batch is not None and self.max_batch < 1:
            raise ConfigurationError("max_batch must be >= 1 when bounded")


@dataclass(frozen=True)
class MlfqConfig:
    """Skip-join multi-level feedback queue config.

    Level quanta form a geometric ladder: base_quantum * growth**level tokens.
    A task that exhausts its level's quantum is demoted one level; new tasks
    skip to the first level whose quantum covers their prompt length.
    """

    num_queues: int = 4
    base_quantum: int = 16
    quantum_growth: int = 2
    max_batch: int | None = None

    def __post_init__(self):
        if self.num_queues < 1:
            raise ConfigurationError("num_queues must be >= 1")
        if self.base_quantum < 1:
            raise ConfigurationError("base_quantum must be >= 1")
        if self.quantum_growth < 2:
            raise ConfigurationError("quantum_growth must be >= 2 (quanta must increase)")
        if self.max_batch is not None and self.max_batch < 1:
            raise ConfigurationError("max_batch must be >= 1 when bounded")

    def quantum(self, level: int) -> int:
        return self.base_quantum * self.quantum_growth**level

    @property
    def quanta(self) -> tuple[int, ...]:
        return tuple(self.quantum(i) for i in range(self.num_queues))


@dataclass(frozen=True)
class IterationPlan:
    """One decode iteration: tasks to admit now plus the batch to run."""

    admit: tuple[int, ...]  # task ids pulled from the wait queue, FCFS
    batch: tuple[int, ...]  # task ids decoding this iteration
    latency_ms: float  # cost of the iteration under the given model


def _fcfs_key(item) -> tuple[float, int]:
    return (item.arrival, item.id)


def orca_step(active: Sequence, waiting: Sequence, cfg: OrcaConfig, model: LatencyCalibration) -> IterationPlan:
    """Plan one dynamic-batching iteration.

    Admits waiting tasks in arrival order up to max_batch, then batches every
    active task.  Items need ``id`` and ``arrival`` attributes.
    """
    room = len(waiting) if cfg.max_batch is None else max(0, cfg.max_batch - len(active))
    admit = tuple(item.id for item in sorted(waiting, key=_fcfs_key)[:room])
    batch = tuple(item.id for item in active) + admit
    latency = model.decode_latency(len(batch)) if batch else 0.0
    return IterationPlan(admit=admit, batch=batch, latency_ms=latency)


def skip_join_level(prompt_tokens: int, cfg: MlfqConfig) -> int:
    """Initial queue level: the first whose quantum covers the prompt length."""
    for level in range(cfg.num_queues):
        if cfg.quantum(level) >= prompt_tokens:
            return level
    return cfg.num_queues - 1


def should_demote(tokens_at_level: int, level: int, cfg: MlfqConfig) -> bool:
    """A task is demoted once it has consumed its level's token quantum."""
    return level < cfg.num_queues - 1 and tokens_at_level >= cfg.quantum(level)


def fastserve_step(queues: Sequence[Sequence], cfg: MlfqConfig, model: LatencyCalibration) -> IterationPlan:
    """Plan one MLFQ iteration: highest-priority runnable tasks up to max_batch.

    ``queues`` is one FCFS-ordered sequence per level, highest priority first.
    Admission (skip-join placement) happens when tasks become ready, so the
    plan's admit list is always empty here.
    """
    batch: list[int] = []
    limit = cfg.max_batch
    for level_items in queues:
        for item in level_items:
            if limit is not None and len(batch) >= limit:
                break
            batch.append(item.id)
        if limit is not None and len(batch) >= limit:
            break
    latency = model.decode_latency(len(batch)) if batch else 0.0
    return IterationPlan(admit=(), batch=tuple(batch), latency_ms=latency)
