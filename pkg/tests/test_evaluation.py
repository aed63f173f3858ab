import json
from pathlib import Path

import pytest

from salm.episode import COLLISION, EpisodeLog, StepRecord, SUCCESS, TIMEOUT, RewardBreakdown
from salm.evaluation import (
    BatchConfig,
    MetricsRow,
    MetricsTable,
    emit_report,
    feedback_script_for,
    initial_command,
    metrics_row,
    run_batch,
    run_manifest,
    social_score,
    success_rate,
    write_manifest,
)
from salm.guidance import GlobalGuidance, guidance_snapshot
from salm.llm import LlmBackend
from salm.planners import PlannerConfig
from salm.sim import spawn_scenario

MOCK = LlmBackend(kind="mock")


def fake_log(outcome, steps=40, discomfort_steps=0, seed=0, dt=0.25):
    scenario = spawn_scenario(seed, 0, "p2p")
    g = GlobalGuidance(task="p2p", target=(0.0, 6.0), social_distance=0.4,
                       norm="robot_first", stop_distance=1.0)
    records = []
    for i in range(steps):
        discomfort = -0.5 if i < discomfort_steps else 0.0
        records.append(StepRecord(
            world=scenario, guidance=guidance_snapshot(g), a_rl=None, a_lm=None,
            weights=None, action=(0.0, 1.0),
            reward=RewardBreakdown(0.25, 0.0, discomfort, 0.0),
            events=[], got=None, status="running",
        ))
    return EpisodeLog(steps=records, outcome=outcome, nav_time=steps * dt, task="p2p", seed=seed)


def test_success_rate_basic():
    logs = [fake_log(SUCCESS)] * 45 + [fake_log(COLLISION)] * 5
    assert success_rate(logs) == pytest.approx(90.0)
    assert success_rate([fake_log(SUCCESS)]) == 100.0
    assert success_rate([fake_log(TIMEOUT)] * 3) == 0.0
    with pytest.raises(ValueError):
        success_rate([])


def test_social_score_maximum():
    # Success at optimal time with zero discomfort hits the declared maximum.
    log = fake_log(SUCCESS, steps=48)  # 12 m at 1 m/s = 48 steps = t_opt
    assert social_score([log]) == pytest.approx(100.0)


def test_social_score_collision_floor():
    assert social_score([fake_log(COLLISION)] * 4) == 0.0


def test_social_score_between_for_slow_or_uncomfortable_runs():
    slow = fake_log(SUCCESS, steps=100)
    uncomfortable = fake_log(SUCCESS, steps=48, discomfort_steps=24)
    assert 50.0 < social_score([slow]) < 100.0
    assert social_score([uncomfortable]) == pytest.approx(87.5)  # 100 - 25 * 0.5
    timeout = fake_log(TIMEOUT, steps=120)
    assert social_score([timeout]) == pytest.approx(25.0)  # discomfort-free timeout


def test_feedback_scripts_deterministic_and_gated_by_probability():
    a = feedback_script_for(12, "p2p", 0.5)
    b = feedback_script_for(12, "p2p", 0.5)
    assert a == b
    assert feedback_script_for(12, "p2p", 0.0) == []
    any_feedback = [feedback_script_for(s, "p2p", 1.0) for s in range(20)]
    assert all(len(script) == 1 for script in any_feedback)
    for script in any_feedback:
        assert 5 <= script[0]["step"] <= 40


def test_pinned_feedback_count_for_default_batch():
    # Enumerated once for seeds 7..56 at p = 0.5 and frozen.
    count = sum(1 for s in range(7, 57) if feedback_script_for(s, "p2p", 0.5))
    assert count == 25
    assert 23 <= count <= 27


def test_pinned_batch_delivers_every_scripted_feedback():
    # All 25 scripted interventions land before termination on the pinned batch.
    logs = run_batch(PlannerConfig(name="SA-RLNM", backend=MOCK), "p2p", 50, 7, 0.5)
    delivered = sum(
        1 for log in logs
        if any(any(e["type"] == "feedback_applied" for e in s.events) for s in log.steps)
    )
    assert delivered == 25


def test_initial_command_shapes():
    scn = spawn_scenario(1, 0, "p2p")
    assert initial_command("p2p", scn) == "go to (0.0, 6.0)"
    assert initial_command("hf", scn) == "follow me"
    assert initial_command("p2p", scn, "pedestrian first") == "go to (0.0, 6.0), pedestrian first"


def test_run_batch_writes_logs_and_is_deterministic(tmp_path):
    cfg = PlannerConfig(name="SA-RLNM", backend=MOCK)
    logs1 = run_batch(cfg, "p2p", 4, 7, 0.5, out_dir=str(tmp_path / "a"))
    logs2 = run_batch(cfg, "p2p", 4, 7, 0.5, out_dir=str(tmp_path / "b"))
    assert [l.outcome for l in logs1] == [l.outcome for l in logs2]
    files_a = sorted(p.name for p in (tmp_path / "a" / "SA-RLNM").glob("*.jsonl"))
    assert files_a == ["10.jsonl", "10.transcript.jsonl", "7.jsonl", "7.transcript.jsonl",
                       "8.jsonl", "8.transcript.jsonl", "9.jsonl", "9.transcript.jsonl"]
    for name in files_a:
        assert (tmp_path / "a" / "SA-RLNM" / name).read_bytes() == (tmp_path / "b" / "SA-RLNM" / name).read_bytes()


def test_transcripts_record_every_backend_call(tmp_path):
    cfg = PlannerConfig(name="SALM", backend=MOCK)
    run_batch(cfg, "p2p", 1, 7, 0.0, out_dir=str(tmp_path))
    lines = (tmp_path / "SALM" / "7.transcript.jsonl").read_text().splitlines()
    header, entries = json.loads(lines[0]), [json.loads(l) for l in lines[1:]]
    assert header["kind"] == "transcript"
    assert entries, "SALM episodes must talk to the backend"
    callers = {e["caller"] for e in entries}
    assert callers == {"lnm", "lfm"}  # guidance parse happens before the episode
    # the episode log points at its transcript by relative name
    final = json.loads((tmp_path / "SALM" / "7.jsonl").read_text().splitlines()[-1])["final"]
    assert final["transcript_ref"] == "7.transcript.jsonl"


def test_run_batch_parallel_workers_match_serial():
    cfg = PlannerConfig(name="SA-RLNM", backend=MOCK)
    serial = run_batch(cfg, "p2p", 4, 7, 0.5)
    parallel = run_batch(cfg, "p2p", 4, 7, 0.5, batch=BatchConfig(workers=2))
    assert [l.outcome for l in serial] == [l.outcome for l in parallel]
    assert [l.n_steps for l in serial] == [l.n_steps for l in parallel]


def test_hf_logs_carry_fov_fraction(tmp_path):
    cfg = PlannerConfig(name="SA-RLNM", backend=MOCK)
    run_batch(cfg, "hf", 1, 7, 0.0, out_dir=str(tmp_path))
    final = json.loads((tmp_path / "SA-RLNM" / "7.jsonl").read_text().splitlines()[-1])["final"]
    assert 0.0 <= final["fov_fraction"] <= 1.0


def test_run_batch_zero_probability_no_feedback_events():
    cfg = PlannerConfig(name="SA-RLNM", backend=MOCK)
    logs = run_batch(cfg, "p2p", 3, 7, 0.0)
    for log in logs:
        for step in log.steps:
            assert not any(e["type"].startswith("feedback") for e in step.events)


def test_run_batch_contains_crashes():
    cfg = PlannerConfig(name="SA-RLNM", backend=MOCK)
    # Invalid pedestrians count forces a scenario crash per episode.
    batch = BatchConfig(n_pedestrians=10_000)
    logs = run_batch(cfg, "p2p", 2, 7, 0.0, batch=batch)
    assert len(logs) == 2
    assert all(l.transcript_ref.startswith("crash:") for l in logs)


def test_outcome_buckets_partition_the_batch():
    logs = run_batch(PlannerConfig(name="SALM", backend=MOCK), "p2p", 10, 7, 0.5)
    row = metrics_row("SALM", "p2p", logs)
    assert row.success_rate + row.collision_rate + row.timeout_rate == pytest.approx(100.0)


def test_metrics_row_fields():
    logs = [fake_log(SUCCESS, steps=48), fake_log(COLLISION), fake_log(TIMEOUT, steps=120)]
    row = metrics_row("SALM", "p2p", logs)
    assert row.episodes == 3
    assert row.success_rate == pytest.approx(100.0 / 3)
    assert row.collision_rate == pytest.approx(100.0 / 3)
    assert row.timeout_rate == pytest.approx(100.0 / 3)
    assert row.mean_nav_time == pytest.approx(12.0)


def table_from(rows):
    return MetricsTable(rows=rows)


def test_emit_report_shape_and_avg(tmp_path):
    rows = [
        MetricsRow("ORCA_baseline", "p2p", 50, 42.0, 35.0, 30.0, 28.0, 20.0, 0.1),
        MetricsRow("ORCA_baseline", "hf", 50, 20.0, 24.0, 40.0, 40.0, 25.0, 0.2),
        MetricsRow("SALM", "p2p", 50, 90.0, 85.0, 5.0, 5.0, 18.0, 0.05),
        MetricsRow("SALM", "hf", 50, 82.0, 78.0, 8.0, 10.0, 21.0, 0.06),
    ]
    csv_path, md_path = emit_report(table_from(rows), tmp_path)
    csv_lines = csv_path.read_text().splitlines()
    assert csv_lines[0] == "planner,sr_p2p,sr_hf,sr_avg,ss_p2p,ss_hf,ss_avg"
    assert csv_lines[1] == "ORCA_baseline,42.0,20.0,31.0,35.0,24.0,29.5"
    assert csv_lines[2] == "SALM,90.0,82.0,86.0,85.0,78.0,81.5"
    md = md_path.read_text()
    assert "| ORCA_baseline | 42.0 | 20.0 | 31.0 | 35.0 | 24.0 | 29.5 |" in md
    assert "salm-ss/1" in md


def test_report_avg_is_mean_rounded_last(tmp_path):
    rows = [MetricsRow("SALM", "p2p", 50, 90.15, 80.0, 0, 0, None, 0.0),
            MetricsRow("SALM", "hf", 50, 90.26, 70.0, 0, 0, None, 0.0)]
    csv_path, _ = emit_report(table_from(rows), tmp_path)
    line = csv_path.read_text().splitlines()[1]
    # mean(90.15, 90.26) = 90.205 -> rendered 90.2; rounding after averaging
    assert line.split(",")[3] == "90.2"


def test_single_task_report_uses_that_column(tmp_path):
    rows = [MetricsRow("SALM", "p2p", 10, 80.0, 70.0, 0, 0, None, 0.0)]
    csv_path, _ = emit_report(table_from(rows), tmp_path)
    assert csv_path.read_text().splitlines()[1] == "SALM,80.0,-,80.0,70.0,-,70.0"


def test_manifest_contents(tmp_path):
    cfg = PlannerConfig(name="SALM", backend=MOCK)
    manifest = run_manifest(cfg, BatchConfig(task="p2p", n_cases=50, seed0=7))
    assert manifest["run_id"] == "SALM-p2p-s7-n50"
    assert manifest["backend"].startswith("mock:")
    assert manifest["ss_version"] == "salm-ss/1"
    assert manifest["rl_slot"] == "fallback"
    path = write_manifest(manifest, tmp_path)
    assert json.loads(path.read_text())["config_hash"] == manifest["config_hash"]


def test_manifest_records_weights_hash():
    from salm.rlnm.model import init_weights

    weights = init_weights(42)
    cfg = PlannerConfig(name="SA-RLNM", backend=MOCK, rl_weights=weights)
    manifest = run_manifest(cfg, BatchConfig())
    assert manifest["rl_slot"] == weights.manifest_hash()
