"""ensemblekit: pipeline-stage-task workflows on simulated or local backends.

The package splits along the life of a batch job: ``pst`` holds the workflow
model and lifecycle rules, ``platform`` the machine shape and walltime
policy, ``scheduler`` the slot-table placement, ``engine``/``local`` the two
execution backends, ``resilience`` the failure-resubmission protocol, and
``metrics`` the utilization/concurrency/throughput accounting over event
logs.
"""

from ensemblekit.engine import (
    DurationSpec,
    FailureModel,
    RuntimeModel,
    run_simulated,
)
from ensemblekit.events import Event, EventLog
from ensemblekit.local import run_local
from ensemblekit.metrics import (
    compute_utilization,
    concurrency_series,
    throughput,
)
from ensemblekit.platform import (
    NodeSpec,
    PlatformConfig,
    WalltimePolicy,
    get_profile,
    load_platform_config,
    max_walltime_for,
    task_footprint,
    usable_cores,
)
from ensemblekit.pst import (
    Stage,
    TaskDescription,
    TaskState,
    WorkflowRun,
    WorkflowSpec,
    frontier,
    pipelines_frontier,
    transition_task,
    validate_workflow,
)
from ensemblekit.resilience import (
    EngineConfig,
    FailureRecord,
    ResubmissionPlan,
    collect_failures,
    plan_resubmission,
    retry_loop,
)
from ensemblekit.scheduler import (
    Placement,
    SlotTable,
    drain_queue,
    mark_node_health,
    release,
    try_place,
)
from ensemblekit.workloads import generate_example

__version__ = "0.1.0"

__all__ = [
    "DurationSpec",
    "EngineConfig",
    "Event",
    "EventLog",
    "FailureModel",
    "FailureRecord",
    "NodeSpec",
    "Placement",
    "PlatformConfig",
    "ResubmissionPlan",
    "RuntimeModel",
    "SlotTable",
    "Stage",
    "TaskDescription",
    "TaskState",
    "WalltimePolicy",
    "WorkflowRun",
    "WorkflowSpec",
    "collect_failures",
    "compute_utilization",
    "concurrency_series",
    "drain_queue",
    "frontier",
    "generate_example",
    "get_profile",
    "load_platform_config",
    "mark_node_health",
    "max_walltime_for",
    "pipelines_frontier",
    "plan_resubmission",
    "release",
    "retry_loop",
    "run_local",
    "run_simulated",
    "task_footprint",
    "throughput",
    "transition_task",
    "try_place",
    "usable_cores",
    "validate_workflow",
]
