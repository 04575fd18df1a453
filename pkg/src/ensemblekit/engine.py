"""Discrete-event simulator for one allocation ("batch job").

Drives frontier tasks through schedule, launch, and completion against a
slot table, emitting the append-only event log. Strictly single-threaded and
deterministic: identical inputs and seeds yield byte-identical logs.

Fault injection: a persistent node fault kills the task running on the node
at fault time and every task launched onto it afterwards; the scheduler keeps
placing work there because nothing diagnoses the node, which reproduces the
cascade of sequential failures one bad node causes in a wave-structured run.
A transient fault kills current holders only. Task faults fail one task at a
fraction of its runtime.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ensemblekit import events as ev
from ensemblekit.errors import ConfigError, PolicyViolation, Unplaceable
from ensemblekit.events import Event, EventLog
from ensemblekit.platform import (
    PlatformConfig,
    max_walltime_for,
    task_footprint,
)
from ensemblekit.pst import (
    TaskDescription,
    TaskState,
    WorkflowRun,
    WorkflowSpec,
    transition_task,
    validate_workflow,
)
from ensemblekit.scheduler import SlotTable, release, try_place


@dataclass(frozen=True)
class DurationSpec:
    """How long a task class runs: a fixed value, a uniform draw, or the
    task's own expected_runtime_s hint."""

    kind: str  # "fixed" | "uniform" | "expected"
    lo_s: float = 0.0
    hi_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform", "expected"):
            raise ConfigError(f"unknown duration kind {self.kind!r}")
        if self.kind == "fixed" and self.lo_s <= 0:
            raise ConfigError("fixed duration must be > 0")
        if self.kind == "uniform":
            if self.lo_s <= 0 or self.hi_s < self.lo_s:
                raise ConfigError("uniform duration needs 0 < lo <= hi")

    @classmethod
    def fixed(cls, seconds: float) -> "DurationSpec":
        return cls(kind="fixed", lo_s=seconds, hi_s=seconds)

    @classmethod
    def uniform(cls, lo_s: float, hi_s: float) -> "DurationSpec":
        return cls(kind="uniform", lo_s=lo_s, hi_s=hi_s)

    @classmethod
    def expected(cls) -> "DurationSpec":
        return cls(kind="expected")


@dataclass(frozen=True)
class RuntimeModel:
    """Duration distribution per stage with a default, plus the seed.

    Draws are keyed by (seed, task uid) so a task's duration does not depend
    on scheduling order.
    """

    default: DurationSpec = field(default_factory=DurationSpec.expected)
    per_stage: tuple[tuple[str, DurationSpec], ...] = ()
    seed: int = 0

    def spec_for(self, desc: TaskDescription) -> DurationSpec:
        for stage_name, spec in self.per_stage:
            if stage_name == desc.stage_name:
                return spec
        return self.default

    def duration_for(self, desc: TaskDescription) -> float:
        spec = self.spec_for(desc)
        if spec.kind == "fixed":
            return spec.lo_s
        if spec.kind == "uniform":
            rng = random.Random(f"{self.seed}/{desc.uid}")
            return rng.uniform(spec.lo_s, spec.hi_s)
        if desc.expected_runtime_s is None:
            raise ConfigError(
                f"task {desc.uid} has no expected_runtime_s and the runtime "
                f"model for its stage is 'expected'"
            )
        return desc.expected_runtime_s


@dataclass(frozen=True)
class NodeFault:
    node_id: int
    at_ts: float
    persistent: bool


@dataclass(frozen=True)
class TaskFault:
    uid: str
    at_fraction: float

    def __post_init__(self) -> None:
        if not 0 < self.at_fraction <= 1:
            raise ConfigError("at_fraction must be in (0, 1]")


@dataclass(frozen=True)
class FailureModel:
    node_faults: tuple[NodeFault, ...] = ()
    task_faults: tuple[TaskFault, ...] = ()
    seed: int = 0

    @classmethod
    def persistent_node(cls, node_id: int, at_ts: float) -> "FailureModel":
        return cls(node_faults=(NodeFault(node_id, at_ts, persistent=True),))

    @classmethod
    def transient_node(cls, node_id: int, at_ts: float) -> "FailureModel":
        return cls(node_faults=(NodeFault(node_id, at_ts, persistent=False),))

    @classmethod
    def task_fault(cls, uid: str, at_fraction: float) -> "FailureModel":
        return cls(task_faults=(TaskFault(uid, at_fraction),))


# Internal event priorities at equal timestamps: completions run before
# failures, failures before launches, walltime expiry last.
_PRIO_BOOTSTRAP = 0
_PRIO_COMPLETE = 1
_PRIO_FAIL = 2
_PRIO_LAUNCH = 3
_PRIO_WALLTIME = 4


@dataclass
class _Tracker:
    """Per-pipeline bookkeeping mirror of the frontier computation."""

    run: WorkflowRun
    stage_idx: int = 0
    remaining: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.remaining = [len(s.tasks) for s in self.run.spec.stages]

    def current_stage_tasks(self) -> Sequence[TaskDescription]:
        return self.run.spec.stages[self.stage_idx].tasks

    def on_terminal(self) -> bool:
        """Count one terminal task; True when the current stage just closed."""
        self.remaining[self.stage_idx] -= 1
        if self.remaining[self.stage_idx] == 0:
            self.stage_idx += 1
            return self.stage_idx < len(self.run.spec.stages)
        return False


class SimState:
    """Mutable state of a running simulation; advanced one event at a time
    by :func:`step`."""

    def __init__(
        self,
        specs: Sequence[WorkflowSpec],
        platform: PlatformConfig,
        allocation_nodes: int,
        walltime_s: float,
        runtime_model: RuntimeModel,
        failure_model: Optional[FailureModel],
        launch_delay_s: float = 0.0,
        launch_rate_cap: Optional[float] = None,
    ):
        self.platform = platform
        self.allocation_nodes = allocation_nodes
        self.walltime_s = walltime_s
        self.runtime_model = runtime_model
        self.failure_model = failure_model or FailureModel()
        self.launch_delay_s = launch_delay_s
        self.launch_rate_cap = launch_rate_cap

        self.table = SlotTable(platform.node, allocation_nodes)
        self.trackers = [_Tracker(WorkflowRun.start(s)) for s in specs]
        self.uid_tracker: dict[str, _Tracker] = {}
        self.footprints: dict[str, tuple[int, int]] = {}
        self.task_faults: dict[str, float] = {
            f.uid: f.at_fraction for f in self.failure_model.task_faults
        }
        for tracker in self.trackers:
            for desc in tracker.run.spec.tasks():
                if desc.uid in self.uid_tracker:
                    raise ConfigError(
                        f"task uid {desc.uid} appears in more than one "
                        f"pipeline of this job"
                    )
                self.uid_tracker[desc.uid] = tracker
                fp = task_footprint(desc, platform.node)
                if fp[0] > allocation_nodes:
                    raise Unplaceable(
                        f"task {desc.uid} needs {fp[0]} nodes; allocation "
                        f"has {allocation_nodes}"
                    )
                self.footprints[desc.uid] = fp

        self.n_tasks = len(self.uid_tracker)
        self.n_terminal = 0
        self.queue: deque[str] = deque()
        self.persistent_failed: set[int] = set()
        self.epoch: dict[str, int] = {u: 0 for u in self.uid_tracker}
        self.next_launch_ts = 0.0
        self.now = 0.0
        self.ended = False
        self.log = EventLog()
        self._seq = itertools.count()
        self.heap: list[tuple[float, int, str, int, str, object]] = []

        meta = {
            "backend": "sim",
            "platform": platform.name,
            "allocation_nodes": allocation_nodes,
            "cores_total": platform.node.cores_total,
            "cores_reserved": platform.node.cores_reserved,
            "gpus_per_node": platform.node.gpus,
            "bootstrap_s": platform.bootstrap_overhead_s,
            "walltime_s": walltime_s,
        }
        self.log.append(
            Event(ts=0.0, kind=ev.JOB_START, detail=json.dumps(meta))
        )
        self._push(
            platform.bootstrap_overhead_s, _PRIO_BOOTSTRAP, "", "bootstrap", None
        )
        for fault in self.failure_model.node_faults:
            if not 0 <= fault.node_id < allocation_nodes:
                raise ConfigError(
                    f"fault node {fault.node_id} outside allocation"
                )
            if not 0 <= fault.at_ts <= walltime_s:
                raise ConfigError("fault at_ts outside job walltime")
            self._push(
                fault.at_ts, _PRIO_FAIL, f"node:{fault.node_id}",
                "node_fault", fault,
            )
        self._push(walltime_s, _PRIO_WALLTIME, "", "walltime", None)

    # -- helpers ------------------------------------------------------------

    def _push(self, ts: float, prio: int, key: str, action: str, data) -> None:
        heapq.heappush(self.heap, (ts, prio, key, next(self._seq), action, data))

    def _emit(self, ts, kind, uid=None, node_ids=None, detail="") -> None:
        self.log.append(
            Event(ts=ts, kind=kind, task_uid=uid, node_ids=node_ids, detail=detail)
        )

    def _run_of(self, uid: str):
        return self.uid_tracker[uid].run.runs[uid]

    def _enqueue_stage(self, tracker: _Tracker) -> None:
        for desc in tracker.current_stage_tasks():
            self.queue.append(desc.uid)

    def _drain(self, ts: float) -> None:
        """FIFO placement pass: schedule queue-head tasks while they fit."""
        while self.queue:
            uid = self.queue[0]
            desc = self._run_of(uid).desc
            placement = try_place(self.table, desc, self.footprints[uid])
            if placement is None:
                return
            self.queue.popleft()
            run = self._run_of(uid)
            transition_task(run, TaskState.SCHEDULED, ts)
            run.node_ids = placement.node_ids
            self._emit(
                ts,
                ev.TASK_SCHEDULED,
                uid,
                placement.node_ids,
                ev.scheduled_detail(
                    desc.cpu_threads_per_process,
                    desc.gpus_per_process,
                    [procs for _, procs in placement.assignments],
                ),
            )
            launch_ts = ts + self.launch_delay_s
            if self.launch_rate_cap is not None:
                launch_ts = max(launch_ts, self.next_launch_ts)
                self.next_launch_ts = launch_ts + 1.0 / self.launch_rate_cap
            self._push(launch_ts, _PRIO_LAUNCH, uid, "launch", None)

    def _finish(self, ts: float, uid: str, kind: str, detail: str) -> None:
        """Apply a terminal event: state, log, slot release, stage advance."""
        run = self._run_of(uid)
        state = {
            ev.TASK_DONE: TaskState.DONE,
            ev.TASK_FAILED: TaskState.FAILED,
            ev.TASK_CANCELED: TaskState.CANCELED,
        }[kind]
        transition_task(run, state, ts)
        self.epoch[uid] += 1
        self._emit(ts, kind, uid, run.node_ids or None, detail)
        placement = self.table.active_placements().get(uid)
        if placement is not None:
            release(self.table, placement)
        self.n_terminal += 1
        tracker = self.uid_tracker[uid]
        if tracker.on_terminal():
            self._enqueue_stage(tracker)

    def _running_holders(self, node_id: int) -> list[str]:
        holders = []
        for uid, placement in self.table.active_placements().items():
            if node_id in placement.node_ids:
                if self._run_of(uid).state is TaskState.RUNNING:
                    holders.append(uid)
        return sorted(holders)

    @property
    def all_terminal(self) -> bool:
        return self.n_terminal == self.n_tasks

    # -- handlers -----------------------------------------------------------

    def _handle_bootstrap(self, ts: float) -> None:
        self._emit(ts, ev.BOOTSTRAP_DONE)
        for tracker in self.trackers:
            self._enqueue_stage(tracker)
        self._drain(ts)

    def _handle_launch(self, ts: float, uid: str) -> None:
        run = self._run_of(uid)
        if run.state is not TaskState.SCHEDULED:
            return  # stale: task was canceled or failed before launching
        transition_task(run, TaskState.RUNNING, ts)
        self._emit(ts, ev.TASK_LAUNCHED, uid, run.node_ids)
        duration = self.runtime_model.duration_for(run.desc)
        bad = sorted(set(run.node_ids) & self.persistent_failed)
        epoch = self.epoch[uid]
        if bad:
            # node is accepting launches but every run on it is doomed;
            # the crash surfaces at the task's natural end
            self._push(
                ts + duration, _PRIO_FAIL, uid, "task_fail",
                (epoch, f"node_failure node={bad[0]}"),
            )
        elif uid in self.task_faults:
            fail_ts = ts + self.task_faults[uid] * duration
            self._push(
                fail_ts, _PRIO_FAIL, uid, "task_fail", (epoch, "task_fault")
            )
        else:
            self._push(ts + duration, _PRIO_COMPLETE, uid, "complete", epoch)

    def _handle_complete(self, ts: float, uid: str, epoch: int) -> None:
        if epoch != self.epoch[uid]:
            return
        self._finish(ts, uid, ev.TASK_DONE, "")
        self._drain(ts)

    def _handle_task_fail(self, ts: float, uid: str, data) -> None:
        epoch, detail = data
        if epoch != self.epoch[uid]:
            return
        self._finish(ts, uid, ev.TASK_FAILED, detail)
        self._drain(ts)

    def _handle_node_fault(self, ts: float, fault: NodeFault) -> None:
        self._emit(
            ts,
            ev.NODE_FAILED,
            node_ids=(fault.node_id,),
            detail="persistent" if fault.persistent else "transient",
        )
        if fault.persistent:
            self.persistent_failed.add(fault.node_id)
        for uid in self._running_holders(fault.node_id):
            self._finish(
                ts, uid, ev.TASK_FAILED, f"node_failure node={fault.node_id}"
            )
        self._drain(ts)

    def _handle_walltime(self, ts: float) -> None:
        for tracker in self.trackers:
            for stage in tracker.run.spec.stages:
                for desc in stage.tasks:
                    run = tracker.run.runs[desc.uid]
                    if not run.state.terminal:
                        self._finish(ts, desc.uid, ev.TASK_CANCELED, "walltime")
        self.queue.clear()
        self._end(ts)

    def _end(self, ts: float) -> None:
        done = failed = canceled = 0
        for tracker in self.trackers:
            for run in tracker.run.runs.values():
                if run.state is TaskState.DONE:
                    done += 1
                elif run.state is TaskState.FAILED:
                    failed += 1
                elif run.state is TaskState.CANCELED:
                    canceled += 1
        self._emit(
            ts,
            ev.JOB_END,
            detail=f"done={done} failed={failed} canceled={canceled}",
        )
        self.ended = True


def step(state: SimState) -> SimState:
    """Pop the earliest pending event, apply it, enqueue consequents.

    Simultaneous events process in (ts, kind-priority, uid) order with
    completions before failures before launches.
    """
    if state.ended or not state.heap:
        return state
    ts, prio, key, _seq, action, data = heapq.heappop(state.heap)
    state.now = ts
    if action == "bootstrap":
        state._handle_bootstrap(ts)
    elif action == "complete":
        state._handle_complete(ts, key, data)
    elif action == "task_fail":
        state._handle_task_fail(ts, key, data)
    elif action == "node_fault":
        state._handle_node_fault(ts, data)
    elif action == "launch":
        state._handle_launch(ts, key)
    elif action == "walltime":
        if not state.all_terminal:
            state._handle_walltime(ts)
    if not state.ended and state.all_terminal:
        # everything terminal (or nothing to run): the job is over
        state._end(ts)
    return state


def run_simulated(
    specs: Sequence[WorkflowSpec] | WorkflowSpec,
    platform: PlatformConfig,
    allocation_nodes: int,
    walltime_s: float,
    runtime_model: RuntimeModel,
    failure_model: Optional[FailureModel] = None,
    *,
    launch_delay_s: float = 0.0,
    launch_rate_cap: Optional[float] = None,
) -> EventLog:
    """Simulate one batch job over the given pipelines and return its log.

    Deterministic given seeds. The log starts with JOB_START at ts 0 and
    BOOTSTRAP_DONE at the platform's bootstrap overhead; tasks still running
    at the walltime are canceled and the job ends exactly then.
    """
    if isinstance(specs, WorkflowSpec):
        specs = [specs]
    if not 1 <= allocation_nodes <= platform.node_count:
        raise ConfigError(
            f"allocation of {allocation_nodes} nodes outside platform "
            f"{platform.name} ({platform.node_count} nodes)"
        )
    limit = max_walltime_for(platform.policy, allocation_nodes)
    if walltime_s > limit:
        raise PolicyViolation(
            f"walltime {walltime_s}s exceeds policy limit {limit}s "
            f"for {allocation_nodes} nodes"
        )
    if walltime_s <= platform.bootstrap_overhead_s:
        raise ConfigError("walltime must exceed the bootstrap overhead")
    for spec in specs:
        violations = validate_workflow(spec)
        if violations:
            raise ConfigError(
                f"workflow {spec.name} invalid: " + "; ".join(violations)
            )
    state = SimState(
        specs,
        platform,
        allocation_nodes,
        walltime_s,
        runtime_model,
        failure_model,
        launch_delay_s=launch_delay_s,
        launch_rate_cap=launch_rate_cap,
    )
    guard = 0
    limit_steps = 200 * max(state.n_tasks, 1) + 10_000
    while not state.ended and state.heap:
        step(state)
        guard += 1
        if guard > limit_steps:
            raise RuntimeError("simulation did not converge (internal stall)")
    if not state.ended:
        state._end(state.now)
    return state.log
