"""Task model, SLO definitions, and synthetic workload generation.

Two task families exist: real-time tasks carry a hard end-to-end deadline
that is translated into joint TTFT/TPOT requirements, and non-real-time
tasks carry explicit TTFT and TPOT limits.  Poisson workloads are a pure
function of their spec (seed included).
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ConfigurationError

KIND_RT = "real_time"
KIND_NRT = "non_real_time"


@dataclass(frozen=True)
class SloSpec:
    """Per-task service level objective."""

    tpot_limit: float  # seconds per output token
    ttft_limit: float  # seconds to first token
    deadline: float | None = None  # seconds from arrival (real-time only)

    def __post_init__(self):
        if self.tpot_limit <= 0:
            raise ConfigurationError(f"tpot_limit must be > 0, got {self.tpot_limit}")
        if self.ttft_limit <= 0:
            raise ConfigurationError(f"ttft_limit must be > 0, got {self.ttft_limit}")
        if self.deadline is not None and self.deadline <= 0:
            raise ConfigurationError(f"deadline must be > 0, got {self.deadline}")


@dataclass(frozen=True)
class Task:
    """One inference request."""

    id: int
    kind: str  # KIND_RT or KIND_NRT
    arrival: float  # seconds
    prompt_tokens: int
    output_tokens: int
    slo: SloSpec
    utility: float
    label: str = ""

    def __post_init__(self):
        if self.kind not in (KIND_RT, KIND_NRT):
            raise ConfigurationError(f"unknown task kind {self.kind!r}")
        if self.output_tokens < 1:
            raise ConfigurationError("output_tokens must be >= 1")
        if self.prompt_tokens < 1:
            raise ConfigurationError("prompt_tokens must be >= 1")
        if self.utility < 0:
            raise ConfigurationError("utility must be >= 0")
        if self.kind == KIND_RT and self.slo.deadline is None:
            raise ConfigurationError("real-time tasks require a deadline")


def required_rate(task: Task) -> float:
    """Token generation rate (tokens/s) the task's TPOT limit demands."""
    return 1.0 / task.slo.tpot_limit


def derive_rt_slo(deadline: float, output_tokens: int, rt_rate: float) -> SloSpec:
    """Translate a hard deadline into joint TTFT/TPOT requirements.

    The decode budget is ``output_tokens / rt_rate``; whatever remains of the
    deadline is the TTFT budget.  Rejects deadlines that leave no TTFT budget.
    """
    if rt_rate <= 0:
        raise ConfigurationError(f"rt_rate must be > 0, got {rt_rate}")
    ttft_budget = deadline - output_tokens / rt_rate
    if ttft_budget <= 0:
        raise ConfigurationError(
            f"infeasible deadline {deadline}s: {output_tokens} tokens at "
            f"{rt_rate} tokens/s leaves no time to first token"
        )
    return SloSpec(tpot_limit=1.0 / rt_rate, ttft_limit=ttft_budget, deadline=deadline)


@dataclass(frozen=True)
class TaskClass:
    """Template for one workload class (sampling ranges are inclusive)."""

    label: str
    kind: str
    utility: float
    prompt_tokens: tuple[int, int]
    output_tokens: tuple[int, int]
    weight: float = 1.0
    # non-real-time classes:
    tpot_limit: float | None = None
    ttft_limit: float | None = None
    # real-time classes:
    rate: float | None = None  # required tokens/s
    deadline: float | None = None

    def __post_init__(self):
        if self.weight <= 0:
            raise ConfigurationError("class weight must be > 0")
        for name, rng in (("prompt_tokens", self.prompt_tokens), ("output_tokens", self.output_tokens)):
            lo, hi = rng
            if lo < 1 or hi < lo:
                raise ConfigurationError(f"{self.label}: bad {name} range {rng}")
        if self.kind == KIND_RT:
            if self.rate is None or self.deadline is None:
                raise ConfigurationError(f"{self.label}: real-time class needs rate and deadline")
            # every sampleable output length must leave a positive TTFT budget
            derive_rt_slo(self.deadline, self.output_tokens[1], self.rate)
        elif self.kind == KIND_NRT:
            if self.tpot_limit is None or self.ttft_limit is None:
                raise ConfigurationError(f"{self.label}: non-real-time class needs tpot_limit and ttft_limit")
        else:
            raise ConfigurationError(f"unknown task kind {self.kind!r}")


# Default classes.  Rates and the real-time deadline follow the edge-workload
# story (machine control at 20 tokens/s under a 1.5 s deadline; voice chat at
# 8 tokens/s; text Q&A at 10 tokens/s).  Output/prompt lengths, utilities, and
# the NRT TTFT limit are synthetic defaults tuned so that the shipped
# reference calibration saturates near arrival rate 1.0; see README.
DEFAULT_RT_CLASS = TaskClass(
    label="rt",
    kind=KIND_RT,
    utility=100.0,
    prompt_tokens=(16, 64),
    output_tokens=(12, 16),
    rate=20.0,
    deadline=1.5,
)
DEFAULT_VOICE_CLASS = TaskClass(
    label="voice",
    kind=KIND_NRT,
    utility=1.0,
    prompt_tokens=(32, 256),
    output_tokens=(220, 420),
    tpot_limit=0.125,
    ttft_limit=2.0,
)
DEFAULT_TEXT_QA_CLASS = TaskClass(
    label="text_qa",
    kind=KIND_NRT,
    utility=1.0,
    prompt_tokens=(32, 256),
    output_tokens=(220, 410),
    tpot_limit=0.100,
    ttft_limit=2.0,
)
DEFAULT_CLASSES = (DEFAULT_RT_CLASS, DEFAULT_VOICE_CLASS, DEFAULT_TEXT_QA_CLASS)


@dataclass(frozen=True)
class WorkloadSpec:
    """Poisson workload description; generation is deterministic in the seed."""

    arrival_rate: float  # tasks/s
    rt_fraction: float
    rng_seed: int
    task_count: int | None = None
    duration: float | None = None  # seconds; alternative stop rule
    classes: tuple[TaskClass, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        if self.arrival_rate <= 0:
            raise ConfigurationError("arrival_rate must be > 0")
        if not 0.0 <= self.rt_fraction <= 1.0:
            raise ConfigurationError("rt_fraction must be within [0, 1]")
        if (self.task_count is None) == (self.duration is None):
            raise ConfigurationError("specify exactly one of task_count or duration")
        if self.task_count is not None and self.task_count < 1:
            raise ConfigurationError("task_count must be >= 1")
        if self.duration is not None and self.duration <= 0:
            raise ConfigurationError("duration must be > 0")
        rt = [c for c in self.classes if c.kind == KIND_RT]
        nrt = [c for c in self.classes if c.kind == KIND_NRT]
        if self.rt_fraction > 0 and not rt:
            raise ConfigurationError("rt_fraction > 0 but no real-time class defined")
        if self.rt_fraction < 1 and not nrt:
            raise ConfigurationError("rt_fraction < 1 but no non-real-time class defined")


def _pick_class(rng: random.Random, classes: list[TaskClass]) -> TaskClass:
    if len(classes) == 1:
        return classes[0]
    total = sum(c.weight for c in classes)
    x = rng.random() * total
    acc = 0.0
    for c in classes:
        acc += c.weight
        if x < acc:
            return c
    return classes[-1]


def generate(spec: WorkloadSpec) -> list[Task]:
    """Generate the task list: exponential gaps, Bernoulli RT split, per-class sampling."""
    rng = random.Random(spec.rng_seed)
    rt_classes = [c for c in spec.classes if c.kind == KIND_RT]
    nrt_classes = [c for c in spec.classes if c.kind == KIND_NRT]
    tasks: list[Task] = []
    t = 0.0
    i = 0
    while True:
        t += rng.expovariate(spec.arrival_rate)
        if spec.duration is not None and t > spec.duration:
            break
        is_rt = rng.random() < spec.rt_fraction
        cls = _pick_class(rng, rt_classes if is_rt else nrt_classes)
        prompt = rng.randint(*cls.prompt_tokens)
        output = rng.randint(*cls.output_tokens)
        if cls.kind == KIND_RT:
            slo = derive_rt_slo(cls.deadline, output, cls.rate)
        else:
            slo = SloSpec(tpot_limit=cls.tpot_limit, ttft_limit=cls.ttft_limit)
        tasks.append(
            Task(
                id=i,
                kind=cls.kind,
                arrival=t,
                prompt_tokens=prompt,
                output_tokens=output,
                slo=slo,
                utility=cls.utility,
                label=cls.label,
            )
        )
        i += 1
        if spec.task_count is not None and i >= spec.task_count:
            break
    return tasks


# The built-in static scenario: nine simultaneous tasks in three TPOT classes
# (3x100ms, 4x120ms, 2x250ms), equal unit utilities, equal lengths.  Equal
# output lengths keep the dynamic-batching baselines in lockstep so their
# per-task TPOT is a single constant.
STATIC_CLASS_TPOTS = (("A", 0.100, 3), ("B", 0.120, 4), ("C", 0.250, 2))
STATIC_OUTPUT_TOKENS = 50
STATIC_PROMPT_TOKENS = 64


def static_reference_scenario() -> list[Task]:
    tasks = []
    i = 0
    for label, tpot, count in STATIC_CLASS_TPOTS:
        for _ in range(count):
            tasks.append(
                Task(
                    id=i,
                    kind=KIND_NRT,
                    arrival=0.0,
                    prompt_tokens=STATIC_PROMPT_TOKENS,
                    output_tokens=STATIC_OUTPUT_TOKENS,
                    slo=SloSpec(tpot_limit=tpot, ttft_limit=1.0),
                    utility=1.0,
                    label=label,
                )
            )
            i += 1
    return tasks
