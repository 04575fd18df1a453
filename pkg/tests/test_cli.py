import json

import pytest

from ensemblekit import events as ev
from ensemblekit.cli import main
from ensemblekit.events import EventLog
from ensemblekit.platform import save_platform_config
from ensemblekit.pst import Stage, TaskDescription, WorkflowSpec, validate_workflow
from conftest import small_platform


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def small_platform_file(tmp_path):
    # a mini Frontier: 8 nodes of 64 cores (8 reserved) and 8 GPUs
    path = tmp_path / "small.json"
    save_platform_config(
        small_platform(cores=64, reserved=8, gpus=8, nodes=8,
                       max_walltime=50000.0),
        path,
    )
    return path


class TestExample:
    def test_writes_valid_workflow(self, tmp_path):
        out = tmp_path / "wf.json"
        assert run_cli("example", "--example", "exaca", "--cases", "3",
                       "--uq-params", "2", "--out", str(out)) == 0
        spec = WorkflowSpec.load(out)
        assert validate_workflow(spec) == []
        assert len(spec.stages[0].tasks) == 6

    def test_unknown_shape_is_config_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            run_cli("example", "--example", "fusion", "--out", "x.json")

    def test_missing_shape_is_config_error(self, tmp_path):
        assert run_cli("example", "--out", str(tmp_path / "x.json")) == 2


class TestSimulate:
    def test_small_ensemble_end_to_end(self, tmp_path, small_platform_file, capsys):
        wf = tmp_path / "wf.json"
        log = tmp_path / "run.jsonl"
        assert run_cli("example", "--example", "exaconstit", "--tasks", "6",
                       "--no-optimizer", "--out", str(wf)) == 0
        code = run_cli(
            "simulate", "--workflow", str(wf),
            "--platform", str(small_platform_file),
            "--nodes", "8", "--walltime", "20000", "--seed", "1",
            "--runtime", "uniform:600,1244", "--out", str(log),
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "done=6" in out
        assert "node_utilization=" in out
        assert EventLog.load_jsonl(log).complete

    def test_missing_workflow_file(self, tmp_path, capsys):
        code = run_cli(
            "simulate", "--workflow", str(tmp_path / "absent.json"),
            "--profile", "frontier-sim", "--nodes", "4",
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 2

    def test_garbage_workflow_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = run_cli(
            "simulate", "--workflow", str(bad),
            "--profile", "frontier-sim", "--nodes", "4",
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 2

    def test_profile_name_accepted_via_platform_flag(self, tmp_path):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "toy", "--out", str(wf))
        code = run_cli(
            "simulate", "--workflow", str(wf), "--platform", "frontier-sim",
            "--nodes", "4", "--walltime", "7200",
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 0

    def test_walltime_above_policy(self, tmp_path, capsys):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "toy", "--out", str(wf))
        code = run_cli(
            "simulate", "--workflow", str(wf), "--profile", "frontier-sim",
            "--nodes", "4", "--walltime", "99999999",
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 2
        assert "PolicyViolation" in capsys.readouterr().err

    def test_retry_after_node_fault_writes_both_logs(
        self, tmp_path, small_platform_file, capsys
    ):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "exaconstit", "--tasks", "6",
                "--no-optimizer", "--out", str(wf))
        # desk platform has 8 cores/node; members need 64x7 cores => use
        # eight full nodes per member? too wide. Use runtime fixed and the
        # built-in small platform instead via --platform.
        log = tmp_path / "run.jsonl"
        code = run_cli(
            "simulate", "--workflow", str(wf),
            "--platform", str(small_platform_file),
            "--nodes", "8", "--walltime", "20000",
            "--runtime", "fixed:500", "--fail-node", "0@600",
            "--max-attempts", "2", "--out", str(log),
        )
        assert code == 0
        assert log.exists()
        assert (tmp_path / "run.attempt2.jsonl").exists()

    def test_seeded_runs_reproduce_logs(self, tmp_path, small_platform_file):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "exaconstit", "--tasks", "5",
                "--no-optimizer", "--out", str(wf))
        logs = []
        for name in ("a.jsonl", "b.jsonl"):
            path = tmp_path / name
            assert run_cli(
                "simulate", "--workflow", str(wf),
                "--platform", str(small_platform_file),
                "--nodes", "8", "--walltime", "20000", "--seed", "7",
                "--runtime", "uniform:100,500", "--out", str(path),
            ) == 0
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]


class TestReport:
    def make_log(self, tmp_path, small_platform_file):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "exaconstit", "--tasks", "6",
                "--no-optimizer", "--out", str(wf))
        log = tmp_path / "run.jsonl"
        assert run_cli(
            "simulate", "--workflow", str(wf),
            "--platform", str(small_platform_file),
            "--nodes", "8", "--walltime", "20000",
            "--runtime", "uniform:600,1244", "--out", str(log),
        ) == 0
        return log

    def test_writes_three_exports_with_identity(self, tmp_path,
                                                small_platform_file):
        log = self.make_log(tmp_path, small_platform_file)
        prefix = tmp_path / "report"
        assert run_cli("report", "--log", str(log), "--out", str(prefix)) == 0
        util = (tmp_path / "report_utilization.csv").read_text().splitlines()
        assert util[0].startswith("unit,capacity_s")
        import csv

        with open(tmp_path / "report_utilization.csv") as f:
            for row in csv.DictReader(f):
                total = (
                    float(row["ovh_s"]) + float(row["busy_s"])
                    + float(row["idle_s"])
                )
                assert total == pytest.approx(float(row["capacity_s"]), rel=1e-9)
        assert (tmp_path / "report_concurrency.csv").exists()
        assert (tmp_path / "report_rates.csv").exists()

    def test_report_twice_byte_identical(self, tmp_path, small_platform_file):
        log = self.make_log(tmp_path, small_platform_file)
        outs = []
        for prefix in ("r1", "r2"):
            assert run_cli("report", "--log", str(log), "--out",
                           str(tmp_path / prefix)) == 0
            outs.append(
                (tmp_path / f"{prefix}_utilization.csv").read_bytes()
                + (tmp_path / f"{prefix}_concurrency.csv").read_bytes()
                + (tmp_path / f"{prefix}_rates.csv").read_bytes()
            )
        assert outs[0] == outs[1]

    def test_truncated_log_exit_1(self, tmp_path, small_platform_file, capsys):
        log = self.make_log(tmp_path, small_platform_file)
        lines = log.read_text().splitlines()
        truncated = tmp_path / "truncated.jsonl"
        truncated.write_text("\n".join(lines[:-1]) + "\n")
        assert run_cli("report", "--log", str(truncated)) == 1
        assert "IncompleteLog" in capsys.readouterr().err

    def test_missing_log_exit_2(self, tmp_path):
        assert run_cli("report", "--log", str(tmp_path / "absent.jsonl")) == 2


class TestResubmitComposition:
    def test_simulate_resubmit_simulate(self, tmp_path, small_platform_file,
                                        capsys):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "exaconstit", "--tasks", "6",
                "--no-optimizer", "--out", str(wf))
        log = tmp_path / "run.jsonl"
        assert run_cli(
            "simulate", "--workflow", str(wf),
            "--platform", str(small_platform_file),
            "--nodes", "8", "--walltime", "20000",
            "--runtime", "fixed:500", "--fail-node", "2@600",
            "--out", str(log),
        ) == 1  # unresolved failures, single attempt
        plan = tmp_path / "plan.json"
        assert run_cli(
            "resubmit", "--log", str(log), "--workflow", str(wf),
            "--platform", str(small_platform_file), "--out", str(plan),
        ) == 0
        sidecar = json.loads((tmp_path / "plan.json.meta.json").read_text())
        assert sidecar["attempt"] == 2
        assert sidecar["allocation"]["nodes"] >= 1
        retry_log = tmp_path / "retry.jsonl"
        assert run_cli(
            "simulate", "--workflow", str(plan),
            "--platform", str(small_platform_file),
            "--nodes", str(sidecar["allocation"]["nodes"]),
            "--walltime", "20000", "--runtime", "fixed:500",
            "--out", str(retry_log),
        ) == 0
        retried = EventLog.load_jsonl(retry_log)
        assert all(
            e.kind != ev.TASK_FAILED for e in retried
        )

    def test_clean_log_nothing_to_resubmit(self, tmp_path, small_platform_file,
                                           capsys):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "toy", "--out", str(wf))
        log = tmp_path / "run.jsonl"
        assert run_cli(
            "simulate", "--workflow", str(wf),
            "--platform", str(small_platform_file),
            "--nodes", "4", "--walltime", "20000",
            "--out", str(log),
        ) == 0
        assert run_cli(
            "resubmit", "--log", str(log), "--workflow", str(wf),
            "--platform", str(small_platform_file),
            "--out", str(tmp_path / "plan.json"),
        ) == 0
        assert "nothing to resubmit" in capsys.readouterr().out
        assert not (tmp_path / "plan.json").exists()


class TestRunLocal:
    def test_three_stage_pipeline(self, tmp_path, capsys):
        wf = tmp_path / "wf.json"
        run_cli("example", "--example", "toy", "--tasks", "2", "--out", str(wf))
        out_dir = tmp_path / "out"
        code = run_cli("run", "--workflow", str(wf), "--out", str(out_dir),
                       "--max-parallel", "2")
        assert code == 0
        assert (out_dir / "events.jsonl").exists()
        assert (out_dir / "task-logs").is_dir()

    def test_deterministic_failure_exhausts_retries(self, tmp_path, capsys):
        spec = WorkflowSpec(
            name="alwaysfail",
            stages=(
                Stage(
                    name="s0",
                    tasks=(
                        TaskDescription(
                            uid="doomed", executable="/bin/sh",
                            arguments=("-c", "exit 3"),
                        ),
                        TaskDescription(
                            uid="fine", executable="/bin/sh",
                            arguments=("-c", "true"),
                        ),
                    ),
                ),
            ),
        )
        wf = tmp_path / "wf.json"
        spec.save(wf)
        code = run_cli("run", "--workflow", str(wf),
                       "--out", str(tmp_path / "out"), "--max-attempts", "2")
        assert code == 1
        assert "doomed" in capsys.readouterr().out

    def test_transient_failure_recovers_on_retry(self, tmp_path, capsys):
        # fails once, then succeeds: the flag file survives between attempts
        flag = tmp_path / "flaky.flag"
        script = f"if [ -f {flag} ]; then exit 0; else touch {flag}; exit 1; fi"
        spec = WorkflowSpec(
            name="flaky",
            stages=(
                Stage(
                    name="s0",
                    tasks=(
                        TaskDescription(
                            uid="flaky", executable="/bin/sh",
                            arguments=("-c", script),
                        ),
                    ),
                ),
            ),
        )
        wf = tmp_path / "wf.json"
        spec.save(wf)
        code = run_cli("run", "--workflow", str(wf),
                       "--out", str(tmp_path / "out"), "--max-attempts", "2")
        assert code == 0
        out = capsys.readouterr().out
        assert "attempt 1: done=0 failed=1" in out
        assert "attempt 2: done=1 failed=0" in out
