"""SLO-driven LLM inference scheduling testbed."""

from .baselines import MlfqConfig, OrcaConfig
from .latency import LatencyCalibration, default_calibration
from .metrics import RunReport, TaskOutcome, aggregate, build_report, score_task
from .sim import (
    EventQueue,
    SimEvent,
    TokenRecord,
    UtilityAdaptorPolicy,
    apply_adaptor,
    run_simulation,
    simulate,
)
from .slice_core import (
    DecodeMaskMatrix,
    SelectionResult,
    build_mask_matrix,
    estimate_period,
    run_period,
    select_tasks,
    slice_offline,
    utility_rate,
)
from .workload import (
    SloSpec,
    Task,
    TaskClass,
    WorkloadSpec,
    derive_rt_slo,
    generate,
    required_rate,
    static_reference_scenario,
)

__version__ = "0.1.0"
