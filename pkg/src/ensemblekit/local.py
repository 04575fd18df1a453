"""Local process backend: runs tasks as real subprocesses at desk scale.

Honors PST ordering and a concurrency cap instead of slot arithmetic; each
task's pre_exec lines and executable run under one shell, with stdout/stderr
captured per task under the output directory. Emits the same event-log
schema as the simulator, with wall-clock timestamps relative to job start.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import time
from collections import deque
from pathlib import Path
from typing import Sequence

from ensemblekit import events as ev
from ensemblekit.errors import ConfigError
from ensemblekit.events import Event, EventLog
from ensemblekit.platform import PlatformConfig
from ensemblekit.pst import (
    TaskDescription,
    TaskState,
    WorkflowRun,
    WorkflowSpec,
    transition_task,
    validate_workflow,
)

_POLL_INTERVAL_S = 0.005


def _compose_command(desc: TaskDescription) -> str:
    parts = list(desc.pre_exec)
    parts.append(shlex.join([desc.executable, *desc.arguments]))
    return " && ".join(parts)


def run_local(
    specs: Sequence[WorkflowSpec] | WorkflowSpec,
    platform: PlatformConfig,
    max_parallel: int,
    out_dir: str | Path,
) -> EventLog:
    """Execute pipelines as subprocesses, at most max_parallel at a time.

    A nonzero exit becomes TASK_FAILED (with the exit code in the detail) and
    the pipeline still runs to JOB_END; a spawn failure is recorded the same
    way. Tasks run with the output directory as working directory, so
    relative paths hand files between stages.
    """
    if isinstance(specs, WorkflowSpec):
        specs = [specs]
    if max_parallel < 1:
        raise ConfigError("max_parallel must be >= 1")
    seen: set[str] = set()
    for spec in specs:
        violations = validate_workflow(spec)
        if violations:
            raise ConfigError(
                f"workflow {spec.name} invalid: " + "; ".join(violations)
            )
        for desc in spec.tasks():
            if desc.uid in seen:
                raise ConfigError(f"task uid {desc.uid} in more than one pipeline")
            seen.add(desc.uid)

    out_dir = Path(out_dir)
    log_dir = out_dir / "task-logs"
    log_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.monotonic()
    now = lambda: time.monotonic() - t0

    log = EventLog()
    meta = {
        "backend": "local",
        "platform": platform.name,
        "allocation_nodes": 1,
        "cores_total": platform.node.cores_total,
        "cores_reserved": platform.node.cores_reserved,
        "gpus_per_node": platform.node.gpus,
        "bootstrap_s": 0.0,
        "walltime_s": None,
        "max_parallel": max_parallel,
    }
    log.append(Event(ts=0.0, kind=ev.JOB_START, detail=json.dumps(meta)))
    log.append(Event(ts=now(), kind=ev.BOOTSTRAP_DONE))

    runs = [WorkflowRun.start(s) for s in specs]
    stage_idx = [0] * len(runs)
    remaining = [[len(s.tasks) for s in r.spec.stages] for r in runs]
    queue: deque[tuple[int, TaskDescription]] = deque()
    for i, run in enumerate(runs):
        for desc in run.spec.stages[0].tasks:
            queue.append((i, desc))

    running: dict[str, tuple[int, subprocess.Popen, object, object]] = {}

    def spawn(pipeline_i: int, desc: TaskDescription) -> None:
        run = runs[pipeline_i].runs[desc.uid]
        ts = now()
        transition_task(run, TaskState.SCHEDULED, ts)
        run.node_ids = (0,)
        log.append(
            Event(
                ts=ts,
                kind=ev.TASK_SCHEDULED,
                task_uid=desc.uid,
                node_ids=(0,),
                detail=ev.scheduled_detail(
                    desc.cpu_threads_per_process,
                    desc.gpus_per_process,
                    [desc.cpu_processes],
                ),
            )
        )
        stdout = open(log_dir / f"{desc.uid}.out", "wb")
        stderr = open(log_dir / f"{desc.uid}.err", "wb")
        try:
            proc = subprocess.Popen(
                ["/bin/sh", "-c", _compose_command(desc)],
                stdout=stdout,
                stderr=stderr,
                cwd=out_dir,
            )
        except OSError as e:
            stdout.close()
            stderr.close()
            ts = now()
            transition_task(run, TaskState.RUNNING, ts)
            log.append(
                Event(ts=ts, kind=ev.TASK_LAUNCHED, task_uid=desc.uid,
                      node_ids=(0,))
            )
            finish(pipeline_i, desc.uid, ev.TASK_FAILED, f"spawn_error: {e}")
            return
        ts = now()
        transition_task(run, TaskState.RUNNING, ts)
        log.append(
            Event(ts=ts, kind=ev.TASK_LAUNCHED, task_uid=desc.uid, node_ids=(0,))
        )
        running[desc.uid] = (pipeline_i, proc, stdout, stderr)

    def finish(pipeline_i: int, uid: str, kind: str, detail: str) -> None:
        run = runs[pipeline_i].runs[uid]
        ts = now()
        state = TaskState.DONE if kind == ev.TASK_DONE else TaskState.FAILED
        transition_task(run, state, ts)
        log.append(
            Event(ts=ts, kind=kind, task_uid=uid, node_ids=(0,), detail=detail)
        )
        remaining[pipeline_i][stage_idx[pipeline_i]] -= 1
        if remaining[pipeline_i][stage_idx[pipeline_i]] == 0:
            stage_idx[pipeline_i] += 1
            if stage_idx[pipeline_i] < len(runs[pipeline_i].spec.stages):
                for d in runs[pipeline_i].spec.stages[stage_idx[pipeline_i]].tasks:
                    queue.append((pipeline_i, d))

    while queue or running:
        while queue and len(running) < max_parallel:
            pipeline_i, desc = queue.popleft()
            spawn(pipeline_i, desc)
        finished = [
            uid for uid, (_, proc, _, _) in running.items()
            if proc.poll() is not None
        ]
        for uid in finished:
            pipeline_i, proc, stdout, stderr = running.pop(uid)
            stdout.close()
            stderr.close()
            rc = proc.returncode
            if rc == 0:
                finish(pipeline_i, uid, ev.TASK_DONE, "")
            else:
                finish(pipeline_i, uid, ev.TASK_FAILED, f"exit_code={rc}")
        if not finished and running:
            time.sleep(_POLL_INTERVAL_S)

    done = sum(
        1 for r in runs for t in r.runs.values() if t.state is TaskState.DONE
    )
    failed = sum(
        1 for r in runs for t in r.runs.values() if t.state is TaskState.FAILED
    )
    log.append(
        Event(
            ts=now(),
            kind=ev.JOB_END,
            detail=f"done={done} failed={failed} canceled=0",
        )
    )
    return log
