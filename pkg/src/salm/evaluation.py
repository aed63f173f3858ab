"""Batch experiment harness: seeded episode batches, SR/SS metrics, reports.

The social score is this artifact's own composite (version-stamped in every
report): collisions zero an episode; otherwise
    100 * clamp01(0.5*success + 0.25*time_bonus + 0.25*(1 - discomfort_fraction))
with time_bonus = max(0, 1 - (t_nav - t_opt)/(t_timeout - t_opt)) and
t_opt = straight-line distance / v_pref.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import vec_dist
from .episode import (
    COLLISION,
    EpisodeConfig,
    EpisodeLog,
    SUCCESS,
    TIMEOUT,
    run_episode,
    write_log,
)
from .guidance import GlobalGuidance, UserUtterance, parse_request
from .llm import LlmBackend, write_transcript
from .planners import PlannerConfig, build_planner
from .sim import spawn_scenario

SS_VERSION = "salm-ss/1"
FEEDBACK_STREAM = 102  # mixed into the per-episode feedback rng


@dataclass
class MetricsRow:
    planner: str
    task: str
    episodes: int
    success_rate: float
    social_score: float
    collision_rate: float
    timeout_rate: float
    mean_nav_time: Optional[float]
    mean_discomfort: float


@dataclass
class MetricsTable:
    rows: list[MetricsRow]
    ss_version: str = SS_VERSION

    def row(self, planner: str, task: str) -> Optional[MetricsRow]:
        for r in self.rows:
            if r.planner == planner and r.task == task:
                return r
        return None

    def planners(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.planner not in seen:
                seen.append(r.planner)
        return seen


def success_rate(logs: Sequence[EpisodeLog]) -> float:
    if not logs:
        raise ValueError("success_rate needs at least one episode")
    return 100.0 * sum(1 for l in logs if l.outcome == SUCCESS) / len(logs)


def _episode_social_score(log: EpisodeLog, timeout_steps: int) -> float:
    if log.outcome == COLLISION or not log.steps:  # crashed episodes score zero
        return 0.0
    dt = log.steps[0].world.dt
    start = log.steps[0].world.robot.position if log.steps else (0.0, 0.0)
    target = log.steps[0].guidance.get("target") if log.steps else None
    v_pref = log.steps[0].world.robot.v_pref if log.steps else 1.0
    if target is None:  # human-following: straight line to the user's final goal
        user = log.steps[0].world.user if log.steps else None
        target = user.goal if user is not None else start
    t_opt = vec_dist(start, (target[0], target[1])) / v_pref
    t_timeout = timeout_steps * dt
    t_nav = log.nav_time if log.outcome == SUCCESS else t_timeout
    denom = max(t_timeout - t_opt, 1e-9)
    time_bonus = max(0.0, 1.0 - (t_nav - t_opt) / denom)
    score = (
        0.5 * (1.0 if log.outcome == SUCCESS else 0.0)
        + 0.25 * time_bonus
        + 0.25 * (1.0 - log.discomfort_fraction())
    )
    return 100.0 * min(max(score, 0.0), 1.0)


def social_score(logs: Sequence[EpisodeLog], timeout_steps: int = 120) -> float:
    if not logs:
        raise ValueError("social_score needs at least one episode")
    return float(np.mean([_episode_social_score(l, timeout_steps) for l in logs]))


def metrics_row(planner: str, task: str, logs: Sequence[EpisodeLog], timeout_steps: int = 120) -> MetricsRow:
    nav_times = [l.nav_time for l in logs if l.outcome == SUCCESS]
    return MetricsRow(
        planner=planner,
        task=task,
        episodes=len(logs),
        success_rate=success_rate(logs),
        social_score=social_score(logs, timeout_steps),
        collision_rate=100.0 * sum(1 for l in logs if l.outcome == COLLISION) / len(logs),
        timeout_rate=100.0 * sum(1 for l in logs if l.outcome == TIMEOUT) / len(logs),
        mean_nav_time=float(np.mean(nav_times)) if nav_times else None,
        mean_discomfort=float(np.mean([l.discomfort_fraction() for l in logs])),
    )


# -- seeded feedback generation ---------------------------------------------


def feedback_script_for(seed: int, task: str, probability: float) -> list[dict]:
    """Deterministic per-episode feedback: maybe one goal or distance change."""
    rng = np.random.default_rng([seed, FEEDBACK_STREAM])
    if rng.random() >= probability:
        return []
    step = int(rng.integers(5, 41))
    if task == "p2p" and rng.random() < 0.5:
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        radius = float(rng.uniform(2.0, 5.0))
        x, y = radius * math.cos(angle), radius * math.sin(angle)
        return [{"step": step, "text": f"new goal ({x:.1f}, {y:.1f})"}]
    # 2.0+ would make keep-outs larger than the arena corridors allow.
    d = float(rng.choice([0.8, 1.2, 1.5]))
    return [{"step": step, "text": f"keep {d:.1f} meters"}]


def initial_command(task: str, scenario, extra: str = "") -> str:
    if task == "p2p":
        gx, gy = scenario.robot.goal
        text = f"go to ({gx:.1f}, {gy:.1f})"
    else:
        text = "follow me"
    return f"{text}{', ' + extra if extra else ''}"


# -- batch running ------------------------------------------------------------


@dataclass
class BatchConfig:
    task: str = "p2p"
    n_cases: int = 50
    seed0: int = 7
    feedback_probability: float = 0.5
    n_pedestrians: int = 10
    command_extra: str = ""  # appended to the initial command, e.g. "pedestrian first"
    timeout_steps: int = 120
    record_got: bool = True
    workers: int = 1


def _run_one(planner_cfg: PlannerConfig, batch: BatchConfig, seed: int,
             out_dir: Optional[str]) -> EpisodeLog:
    scenario = spawn_scenario(seed, batch.n_pedestrians, batch.task)
    command = initial_command(batch.task, scenario, batch.command_extra)
    guidance = parse_request(UserUtterance(text=command), planner_cfg.backend)
    planner = build_planner(planner_cfg)
    cfg = EpisodeConfig(
        guidance=guidance,
        backend=planner_cfg.backend,
        orca=planner_cfg.orca,
        timeout_steps=batch.timeout_steps,
        record_got=batch.record_got,
    )
    script = feedback_script_for(seed, batch.task, batch.feedback_probability)
    log = run_episode(scenario, planner, script, cfg, seed=seed)
    if out_dir:
        planner_dir = Path(out_dir) / planner_cfg.name
        planner_dir.mkdir(parents=True, exist_ok=True)
        if log.transcript is not None:
            log.transcript_ref = f"{seed}.transcript.jsonl"
            try:
                write_transcript(log.transcript, planner_dir / log.transcript_ref)
            except OSError as exc:  # keep the in-memory copy, keep going
                logging.getLogger(__name__).warning("transcript write failed for seed %s: %s", seed, exc)
                log.transcript_ref = ""
        write_log(log, planner_dir / f"{seed}.jsonl")
    return log


def run_batch(
    planner_cfg: PlannerConfig,
    task: str,
    n_cases: int,
    seed0: int,
    feedback_probability: float,
    out_dir: Optional[str] = None,
    batch: Optional[BatchConfig] = None,
) -> list[EpisodeLog]:
    """Episodes on seeds seed0..seed0+n-1; crashes are recorded, not raised."""
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    if not 0.0 <= feedback_probability <= 1.0:
        raise ValueError("feedback_probability must be in [0, 1]")
    b = batch or BatchConfig()
    b = replace(b, task=task, n_cases=n_cases, seed0=seed0, feedback_probability=feedback_probability)
    seeds = list(range(seed0, seed0 + n_cases))
    logs: list[EpisodeLog] = []
    if b.workers > 1:
        with ProcessPoolExecutor(max_workers=b.workers) as pool:
            futures = [pool.submit(_run_one, planner_cfg, b, s, out_dir) for s in seeds]
            for seed, fut in zip(seeds, futures):
                logs.append(_safe_result(fut, seed, b.task))
    else:
        for seed in seeds:
            try:
                logs.append(_run_one(planner_cfg, b, seed, out_dir))
            except Exception as exc:
                logs.append(_crash_log(seed, b.task, exc))
    return logs


def _safe_result(fut, seed: int, task: str) -> EpisodeLog:
    try:
        return fut.result()
    except Exception as exc:
        return _crash_log(seed, task, exc)


def _crash_log(seed: int, task: str, exc: Exception) -> EpisodeLog:
    return EpisodeLog(steps=[], outcome=TIMEOUT, nav_time=0.0, task=task, seed=seed,
                      transcript_ref=f"crash: {type(exc).__name__}: {exc}")


# -- reports -------------------------------------------------------------------


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.1f}"


def _avg(a: Optional[float], b: Optional[float]) -> Optional[float]:
    values = [v for v in (a, b) if v is not None]
    return sum(values) / len(values) if values else None


def emit_report(table: MetricsTable, out_dir: str | Path, name: str = "report") -> tuple[Path, Path]:
    """Planner rows with P2P/HF/AVG columns for SR and SS, as CSV and Markdown."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["planner", "sr_p2p", "sr_hf", "sr_avg", "ss_p2p", "ss_hf", "ss_avg"]
    lines_csv = [",".join(header)]
    lines_md = [
        f"| Planner | SR P2P | SR HF | SR AVG | SS P2P | SS HF | SS AVG |",
        "|---|---|---|---|---|---|---|",
    ]
    for planner in table.planners():
        p2p, hf = table.row(planner, "p2p"), table.row(planner, "hf")
        sr_p, sr_h = (p2p.success_rate if p2p else None), (hf.success_rate if hf else None)
        ss_p, ss_h = (p2p.social_score if p2p else None), (hf.social_score if hf else None)
        cells = [_fmt(sr_p), _fmt(sr_h), _fmt(_avg(sr_p, sr_h)), _fmt(ss_p), _fmt(ss_h), _fmt(_avg(ss_p, ss_h))]
        lines_csv.append(",".join([planner] + cells))
        lines_md.append("| " + " | ".join([planner] + cells) + " |")
    lines_md.append("")
    lines_md.append(f"Social score: {table.ss_version} (0-100; collisions zero an episode).")
    csv_path = out / f"{name}.csv"
    md_path = out / f"{name}.md"
    csv_path.write_text("\n".join(lines_csv) + "\n")
    md_path.write_text("\n".join(lines_md) + "\n")
    return csv_path, md_path


def run_manifest(planner_cfg: PlannerConfig, batch: BatchConfig) -> dict:
    config_doc = {
        "planner": planner_cfg.name,
        "task": batch.task,
        "cases": batch.n_cases,
        "seed0": batch.seed0,
        "feedback_probability": batch.feedback_probability,
        "n_pedestrians": batch.n_pedestrians,
        "orca": {
            "neighbor_dist": planner_cfg.orca.neighbor_dist,
            "time_horizon": planner_cfg.orca.time_horizon,
            "max_neighbors": planner_cfg.orca.max_neighbors,
        },
    }
    return {
        "run_id": f"{planner_cfg.name}-{batch.task}-s{batch.seed0}-n{batch.n_cases}",
        "config": config_doc,
        "config_hash": hashlib.sha256(json.dumps(config_doc, sort_keys=True).encode()).hexdigest()[:16],
        "code_version": __version__,
        "backend": planner_cfg.backend.identity,
        "rl_slot": "fallback" if planner_cfg.rl_weights is None else planner_cfg.rl_weights.manifest_hash(),
        "ss_version": SS_VERSION,
    }


def write_manifest(manifest: dict, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
