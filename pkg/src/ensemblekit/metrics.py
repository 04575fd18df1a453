"""Utilization, concurrency and throughput analytics over event logs.

Everything here is a pure function of the log: recomputation is idempotent
and logs are never mutated. The accounting identity ovh + busy + idle =
capacity holds per unit system (nodes, cores, GPUs). Busy time counts
launch to terminal; slots reserved but not yet launched count as idle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from ensemblekit import events as ev
from ensemblekit.errors import (
    EnsembleKitError,
    InsufficientData,
    MalformedLog,
)
from ensemblekit.events import EventLog, parse_scheduled_detail
from ensemblekit.platform import PlatformConfig, usable_cores


@dataclass(frozen=True)
class UnitUsage:
    """Capacity accounting in one unit system (node-, core- or GPU-seconds)."""

    capacity_s: float
    ovh_s: float
    busy_s: float
    idle_s: float
    utilization_fraction: float


@dataclass(frozen=True)
class UtilizationStack:
    nodes: UnitUsage
    cores: UnitUsage
    gpus: UnitUsage


@dataclass(frozen=True)
class ConcurrencyPoint:
    ts: float
    n_scheduled_pending_launch: int
    n_running: int


@dataclass(frozen=True)
class ConcurrencySeries:
    points: tuple[ConcurrencyPoint, ...]


@dataclass(frozen=True)
class RateSummary:
    """Scheduling/launch rates over the initial ramp.

    The ramp ends at the first instant the running count reaches its series
    maximum (it stops increasing there); with no launches in the log the
    whole log is the ramp. Rates are None when fewer than two events of the
    kind fall in the ramp or they share one timestamp.
    """

    scheduling_rate_tasks_per_s: Optional[float]
    launching_rate_tasks_per_s: Optional[float]
    ramp_end_ts: Optional[float]
    sched_first_ts: Optional[float]
    sched_last_ts: Optional[float]
    sched_count: int
    launch_first_ts: Optional[float]
    launch_last_ts: Optional[float]
    launch_count: int


@dataclass
class _Timeline:
    sched_ts: Optional[float] = None
    launch_ts: Optional[float] = None
    terminal_ts: Optional[float] = None
    terminal_kind: Optional[str] = None
    node_ids: tuple[int, ...] = ()
    threads: int = 1
    gpus_pp: int = 0
    chunks: tuple[int, ...] = ()


def task_timelines(log: EventLog) -> dict[str, _Timeline]:
    """Per-task schedule/launch/terminal timestamps, validated for ordering."""
    out: dict[str, _Timeline] = {}
    for event in log:
        if event.task_uid is None:
            continue
        tl = out.setdefault(event.task_uid, _Timeline())
        if tl.terminal_ts is not None:
            raise MalformedLog(
                f"task {event.task_uid}: event after terminal state"
            )
        if event.kind == ev.TASK_SCHEDULED:
            if tl.sched_ts is not None:
                raise MalformedLog(f"task {event.task_uid}: scheduled twice")
            tl.sched_ts = event.ts
            tl.node_ids = event.node_ids or ()
            detail = parse_scheduled_detail(event.detail)
            tl.threads = int(detail["threads"])
            tl.gpus_pp = int(detail["gpus_pp"])
            tl.chunks = tuple(int(c) for c in detail["chunks"])
        elif event.kind == ev.TASK_LAUNCHED:
            if tl.sched_ts is None:
                raise MalformedLog(
                    f"task {event.task_uid}: launched before scheduled"
                )
            if tl.launch_ts is not None:
                raise MalformedLog(f"task {event.task_uid}: launched twice")
            tl.launch_ts = event.ts
        elif event.kind in (ev.TASK_DONE, ev.TASK_FAILED):
            if tl.launch_ts is None:
                raise MalformedLog(
                    f"task {event.task_uid}: {event.kind} without launch"
                )
            tl.terminal_ts = event.ts
            tl.terminal_kind = event.kind
        elif event.kind == ev.TASK_CANCELED:
            tl.terminal_ts = event.ts
            tl.terminal_kind = event.kind
    return out


def compute_utilization(
    log: EventLog, platform: PlatformConfig, allocation_nodes: int
) -> UtilizationStack:
    """Fold a complete log into the three-band stack (ovh, busy, idle) in
    node-, core- and GPU-seconds.

    Node-busy counts each node's time covered by at least one holder (the
    interval union, which equals nodes-held times duration whenever tasks do
    not share nodes). Core/GPU busy counts the reserved slot-seconds between
    launch and terminal.
    """
    end_ts = log.job_end_ts()
    boot_ts = log.bootstrap_ts()
    timelines = task_timelines(log)

    node_intervals: dict[int, list[tuple[float, float]]] = {}
    busy_cores = 0.0
    busy_gpus = 0.0
    for tl in timelines.values():
        if tl.launch_ts is None or tl.terminal_ts is None:
            continue
        span = tl.terminal_ts - tl.launch_ts
        for node_id in tl.node_ids:
            node_intervals.setdefault(node_id, []).append(
                (tl.launch_ts, tl.terminal_ts)
            )
        busy_cores += sum(c * tl.threads for c in tl.chunks) * span
        busy_gpus += sum(c * tl.gpus_pp for c in tl.chunks) * span

    busy_nodes = 0.0
    for intervals in node_intervals.values():
        intervals.sort()
        cur_lo, cur_hi = intervals[0]
        for lo, hi in intervals[1:]:
            if lo > cur_hi:
                busy_nodes += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        busy_nodes += cur_hi - cur_lo

    def unit(per_node: float, busy: float) -> UnitUsage:
        capacity = allocation_nodes * per_node * end_ts
        ovh = allocation_nodes * per_node * boot_ts
        idle = capacity - ovh - busy
        fraction = busy / capacity if capacity > 0 else 0.0
        return UnitUsage(
            capacity_s=capacity,
            ovh_s=ovh,
            busy_s=busy,
            idle_s=idle,
            utilization_fraction=fraction,
        )

    return UtilizationStack(
        nodes=unit(1.0, busy_nodes),
        cores=unit(float(usable_cores(platform.node)), busy_cores),
        gpus=unit(float(platform.node.gpus), busy_gpus),
    )


def concurrency_series(log: EventLog) -> ConcurrencySeries:
    """Sweep the log into (ts, pending-launch, running) change points.

    TASK_SCHEDULED increments pending, TASK_LAUNCHED moves pending to
    running, terminal events decrement whichever phase the task occupies.
    Events sharing a timestamp coalesce into one point.
    """
    phase: dict[str, str] = {}
    pending = running = 0
    points: list[ConcurrencyPoint] = []
    current_ts: Optional[float] = None

    def flush() -> None:
        if current_ts is not None:
            points.append(ConcurrencyPoint(current_ts, pending, running))

    for event in log:
        if event.task_uid is None:
            continue
        uid = event.task_uid
        state = phase.get(uid)
        if state == "terminal":
            raise MalformedLog(f"task {uid}: event after terminal state")
        if event.kind == ev.TASK_SCHEDULED:
            if state is not None:
                raise MalformedLog(f"task {uid}: scheduled twice")
            phase[uid] = "scheduled"
            delta_p, delta_r = 1, 0
        elif event.kind == ev.TASK_LAUNCHED:
            if state != "scheduled":
                raise MalformedLog(f"task {uid}: launched from {state}")
            phase[uid] = "running"
            delta_p, delta_r = -1, 1
        elif event.kind in (ev.TASK_DONE, ev.TASK_FAILED):
            if state != "running":
                raise MalformedLog(f"task {uid}: {event.kind} from {state}")
            phase[uid] = "terminal"
            delta_p, delta_r = 0, -1
        elif event.kind == ev.TASK_CANCELED:
            delta_p = -1 if state == "scheduled" else 0
            delta_r = -1 if state == "running" else 0
            phase[uid] = "terminal"
        else:
            continue
        if current_ts is not None and event.ts != current_ts:
            flush()
        current_ts = event.ts
        pending += delta_p
        running += delta_r
    flush()
    return ConcurrencySeries(points=tuple(points))


def throughput(log: EventLog) -> RateSummary:
    """Scheduling and launching rates measured over the initial ramp."""
    sched = [e.ts for e in log if e.kind == ev.TASK_SCHEDULED]
    if len(sched) < 2:
        raise InsufficientData(
            f"need at least 2 TASK_SCHEDULED events, have {len(sched)}"
        )
    launched = [e.ts for e in log if e.kind == ev.TASK_LAUNCHED]
    series = concurrency_series(log)
    max_running = max((p.n_running for p in series.points), default=0)
    ramp_end: Optional[float] = None
    if max_running > 0:
        ramp_end = next(
            p.ts for p in series.points if p.n_running == max_running
        )

    def in_ramp(ts_list: list[float]) -> list[float]:
        if ramp_end is None:
            return ts_list
        return [t for t in ts_list if t <= ramp_end]

    def rate(ts_list: list[float]) -> Optional[float]:
        if len(ts_list) < 2:
            return None
        span = ts_list[-1] - ts_list[0]
        if span <= 0:
            return None
        return (len(ts_list) - 1) / span

    s_in, l_in = in_ramp(sched), in_ramp(launched)
    return RateSummary(
        scheduling_rate_tasks_per_s=rate(s_in),
        launching_rate_tasks_per_s=rate(l_in),
        ramp_end_ts=ramp_end,
        sched_first_ts=s_in[0] if s_in else None,
        sched_last_ts=s_in[-1] if s_in else None,
        sched_count=len(s_in),
        launch_first_ts=l_in[0] if l_in else None,
        launch_last_ts=l_in[-1] if l_in else None,
        launch_count=len(l_in),
    )


# -- export / import ----------------------------------------------------------

_UNIT_FIELDS = ["capacity_s", "ovh_s", "busy_s", "idle_s", "utilization_fraction"]


def export(obj, format: str, path: str | Path) -> Path:
    """Write a stack, series or rate summary as CSV (with header row) or
    JSON mirroring the type fields. Output is bit-stable."""
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(asdict(obj), indent=2) + "\n")
        return path
    if format != "csv":
        raise EnsembleKitError(f"unknown export format {format!r}")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        if isinstance(obj, UtilizationStack):
            writer.writerow(["unit"] + _UNIT_FIELDS)
            for unit_name in ("nodes", "cores", "gpus"):
                usage = getattr(obj, unit_name)
                writer.writerow(
                    [unit_name] + [repr(getattr(usage, f)) for f in _UNIT_FIELDS]
                )
        elif isinstance(obj, ConcurrencySeries):
            writer.writerow(["ts", "n_scheduled_pending_launch", "n_running"])
            for p in obj.points:
                writer.writerow(
                    [repr(p.ts), p.n_scheduled_pending_launch, p.n_running]
                )
        elif isinstance(obj, RateSummary):
            writer.writerow(["field", "value"])
            for key, value in asdict(obj).items():
                writer.writerow([key, "" if value is None else repr(value)])
        else:
            raise EnsembleKitError(f"cannot export {type(obj).__name__}")
    return path


def load_utilization(path: str | Path, format: str) -> UtilizationStack:
    if format == "json":
        doc = json.loads(Path(path).read_text())
        return UtilizationStack(
            **{k: UnitUsage(**v) for k, v in doc.items()}
        )
    units = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            units[row["unit"]] = UnitUsage(
                **{k: float(row[k]) for k in _UNIT_FIELDS}
            )
    return UtilizationStack(**units)


def load_series(path: str | Path, format: str) -> ConcurrencySeries:
    if format == "json":
        doc = json.loads(Path(path).read_text())
        return ConcurrencySeries(
            points=tuple(ConcurrencyPoint(**p) for p in doc["points"])
        )
    points = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            points.append(
                ConcurrencyPoint(
                    ts=float(row["ts"]),
                    n_scheduled_pending_launch=int(
                        row["n_scheduled_pending_launch"]
                    ),
                    n_running=int(row["n_running"]),
                )
            )
    return ConcurrencySeries(points=tuple(points))


def load_rates(path: str | Path, format: str) -> RateSummary:
    if format == "json":
        return RateSummary(**json.loads(Path(path).read_text()))
    fields = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            raw = row["value"]
            if raw == "":
                fields[row["field"]] = None
            elif row["field"].endswith("count"):
                fields[row["field"]] = int(raw)
            else:
                fields[row["field"]] = float(raw)
    return RateSummary(**fields)
