#!/usr/bin/env python3
"""Node-failure and automatic resubmission demo.

Injects a persistent node fault into an ensemble run, shows the cascade of
failures on the bad node (one per scheduling wave), then lets the retry loop
plan a right-sized follow-up job that runs the failed members clean.

Usage:
    python scripts/fault_injection.py [--tasks 48] [--nodes 64]
        [--fail-node 2] [--fail-at 700]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ensemblekit import events as ev
from ensemblekit.engine import DurationSpec, FailureModel, RuntimeModel
from ensemblekit.platform import get_profile, max_walltime_for
from ensemblekit.resilience import EngineConfig, retry_loop
from ensemblekit.workloads import generate_example


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tasks", type=int, default=48)
    parser.add_argument("--nodes", type=int, default=64)
    parser.add_argument("--fail-node", type=int, default=2)
    parser.add_argument("--fail-at", type=float, default=700.0)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--max-attempts", type=int, default=2)
    args = parser.parse_args()

    platform = get_profile("frontier-sim")
    workflow = generate_example(
        "exaconstit", {"tasks": args.tasks, "optimizer": False, "seed": args.seed}
    )
    cfg = EngineConfig(
        allocation_nodes=args.nodes,
        walltime_s=max_walltime_for(platform.policy, args.nodes),
        runtime_model=RuntimeModel(
            default=DurationSpec.uniform(600.0, 1244.0), seed=args.seed
        ),
        failure_models=(
            FailureModel.persistent_node(args.fail_node, args.fail_at),
        ),
    )
    logs, unresolved = retry_loop(workflow, platform, cfg, args.max_attempts)

    for attempt, log in enumerate(logs, start=1):
        done = sum(1 for e in log if e.kind == ev.TASK_DONE)
        failed = [e for e in log if e.kind == ev.TASK_FAILED]
        print(f"attempt {attempt}: done={done} failed={len(failed)} "
              f"runtime={log.job_end_ts():.0f}s")
        for event in failed:
            print(f"    {event.ts:8.1f}s  {event.task_uid}  {event.detail}")

    if unresolved:
        print(f"unresolved after {len(logs)} attempts: "
              + " ".join(r.uid for r in unresolved))
        return 1
    print("all members completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
