"""Episode loop: task targets, norm gating, rewards, termination, logging.

EpisodeRunner advances one step at a time so the batch harness and the live
session server share the exact same semantics.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .core import (
    AgentState,
    LocalAction,
    STOP_ACTION,
    Vec2,
    WorldState,
    clip_action,
    vec_dist,
    vec_norm,
)
from .guidance import (
    HF,
    P2P,
    PEDESTRIAN_FIRST,
    GlobalGuidance,
    GuidanceParseError,
    UserUtterance,
    guidance_snapshot,
    replan_guidance,
)
from .llm import LlmBackend, RecordingBackend, Transcript, write_transcript
from .orca import OrcaParams
from .sim import detect_collisions, min_pedestrian_surface_distance, step_world, trajectory_record

RUNNING = "running"
SUCCESS = "success"
COLLISION = "collision"
TIMEOUT = "timeout"

# Hand-crafted local-reward constants (crowd-nav convention scaled x10).
SUCCESS_BONUS = 10.0
COLLISION_PENALTY = -10.0
DISCOMFORT_SCALE = -2.0
SUCCESS_RADIUS = 0.3
TIMEOUT_STEPS = 120
HF_SUCCESS_FACTOR = 1.5
FOV_HALF_ANGLE = math.pi / 3  # 2*pi/3 cone around the velocity direction


@dataclass(frozen=True)
class RewardBreakdown:
    progress: float
    collision_penalty: float
    discomfort_penalty: float
    success_bonus: float

    @property
    def total(self) -> float:
        return self.progress + self.collision_penalty + self.discomfort_penalty + self.success_bonus

    def to_json(self) -> dict:
        return {
            "progress": self.progress,
            "collision_penalty": self.collision_penalty,
            "discomfort_penalty": self.discomfort_penalty,
            "success_bonus": self.success_bonus,
            "total": self.total,
        }


@dataclass
class StepRecord:
    world: WorldState  # pre-step snapshot the decision was made on
    guidance: dict
    a_rl: Optional[tuple[float, float]]
    a_lm: Optional[dict]
    weights: Optional[tuple[float, float]]
    action: tuple[float, float]  # executed (gated + clipped)
    reward: RewardBreakdown
    events: list[dict]
    got: Optional[dict]
    status: str  # status after this step


@dataclass
class EpisodeLog:
    steps: list[StepRecord]
    outcome: str
    nav_time: float
    task: str
    seed: Optional[int] = None
    transcript_ref: str = ""
    transcript: Optional[Transcript] = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def discomfort_fraction(self) -> float:
        if not self.steps:
            return 0.0
        flagged = sum(1 for s in self.steps if s.reward.discomfort_penalty < 0)
        return flagged / len(self.steps)

    def fov_fraction(self) -> Optional[float]:
        """Fraction of steps with the user inside the robot's view cone (HF only)."""
        if self.task != HF or not self.steps:
            return None
        inside = sum(1 for s in self.steps if user_in_fov(s.world))
        return inside / len(self.steps)


@dataclass
class EpisodeConfig:
    guidance: GlobalGuidance
    backend: LlmBackend | None = None
    orca: OrcaParams = field(default_factory=OrcaParams)
    timeout_steps: int = TIMEOUT_STEPS
    success_radius: float = SUCCESS_RADIUS
    gamma: float = 0.9
    step_budget_s: float = 30.0
    robot_visible: bool = True
    record_got: bool = True


class Planner(Protocol):
    name: str

    def reset(self, scenario: WorldState, guidance: GlobalGuidance) -> None: ...

    def decide(self, world: WorldState, guidance: GlobalGuidance) -> "PlannerDecision": ...

    def observe(self, world: WorldState, guidance: GlobalGuidance, action: LocalAction,
                weights: Optional[tuple[float, float]], reward: float) -> None: ...


@dataclass
class PlannerDecision:
    action: LocalAction
    a_rl: Optional[LocalAction] = None
    a_lm: Optional[object] = None  # LmAction, kept loose to avoid a hard import cycle
    weights: Optional[tuple[float, float]] = None
    got: Optional[dict] = None
    events: list[dict] = field(default_factory=list)


def current_target(g: GlobalGuidance, w: WorldState) -> Vec2:
    """P2P: the fixed target.  HF: a point behind the user along its heading."""
    if g.task == P2P:
        assert g.target is not None
        return g.target
    user = w.user
    if user is None:
        return g.target if g.target is not None else w.robot.position
    offset = g.follow_offset
    if vec_norm(user.velocity) > 1e-9:
        hx, hy = user.velocity[0] / vec_norm(user.velocity), user.velocity[1] / vec_norm(user.velocity)
    else:
        hx, hy = math.cos(user.heading), math.sin(user.heading)
    return (user.position[0] - offset * hx, user.position[1] - offset * hy)


def apply_norm_gate(a: LocalAction, w: WorldState, g: GlobalGuidance) -> LocalAction:
    """Pedestrian-first: full stop whenever any pedestrian is within stop distance.

    The user never triggers the gate.
    """
    if g.norm != PEDESTRIAN_FIRST:
        return a
    if min_pedestrian_surface_distance(w) < g.stop_distance:
        return STOP_ACTION
    return a


def _hf_success(w: WorldState, g: GlobalGuidance, success_radius: float) -> bool:
    if w.user is None:
        return False
    user_done = w.user.dist_to_goal() <= success_radius
    surface = vec_dist(w.robot.position, w.user.position) - w.robot.radius - w.user.radius
    return user_done and surface <= max(HF_SUCCESS_FACTOR * g.social_distance, success_radius)


def episode_success(w: WorldState, g: GlobalGuidance, success_radius: float = SUCCESS_RADIUS) -> bool:
    if g.task == P2P:
        return vec_dist(w.robot.position, current_target(g, w)) <= success_radius
    return _hf_success(w, g, success_radius)


def local_reward(
    w_before: WorldState,
    a: LocalAction,
    w_after: WorldState,
    g: GlobalGuidance,
    success_radius: float = SUCCESS_RADIUS,
) -> RewardBreakdown:
    """Hand-crafted per-step reward: progress, contact, discomfort, terminal bonus."""
    target = current_target(g, w_before)
    progress = vec_dist(w_before.robot.position, target) - vec_dist(w_after.robot.position, target)
    report = detect_collisions(w_after, g.social_distance)
    collision_penalty = COLLISION_PENALTY if report.any_hit else 0.0
    discomfort = 0.0
    if g.social_distance > 0:
        for p, flagged in zip(w_after.pedestrians, report.discomfort_flags):
            if flagged:
                sep = vec_dist(w_after.robot.position, p.position) - w_after.robot.radius - p.radius
                discomfort += DISCOMFORT_SCALE * (g.social_distance - sep) / g.social_distance
    bonus = SUCCESS_BONUS if episode_success(w_after, g, success_radius) else 0.0
    return RewardBreakdown(progress, collision_penalty, discomfort, bonus)


def macro_reward(log_window: Sequence[RewardBreakdown | float], gamma: float) -> float:
    """Discounted sum of step rewards over a window."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    total = 0.0
    for t, r in enumerate(log_window):
        value = r.total if isinstance(r, RewardBreakdown) else float(r)
        total += (gamma ** t) * value
    return total


def user_in_fov(w: WorldState) -> bool:
    """Is the user inside a 2*pi/3 cone around the robot's motion direction?"""
    if w.user is None:
        return False
    v = w.robot.velocity
    if vec_norm(v) <= 1e-9:
        hx, hy = math.cos(w.robot.heading), math.sin(w.robot.heading)
    else:
        hx, hy = v[0] / vec_norm(v), v[1] / vec_norm(v)
    ux, uy = w.user.position[0] - w.robot.position[0], w.user.position[1] - w.robot.position[1]
    n = math.hypot(ux, uy)
    if n <= 1e-9:
        return True
    cos_angle = (ux * hx + uy * hy) / n
    return cos_angle >= math.cos(FOV_HALF_ANGLE)


class EpisodeRunner:
    """Owns one episode's mutable state; step() advances exactly one tick."""

    def __init__(self, scenario: WorldState, planner: Planner, cfg: EpisodeConfig,
                 seed: Optional[int] = None):
        self.world = scenario
        self.planner = planner
        self.cfg = cfg
        self.guidance = cfg.guidance
        self.seed = seed
        self.status = RUNNING
        self.records: list[StepRecord] = []
        self._pending_events: list[dict] = []
        self.transcript = Transcript()
        self.backend = RecordingBackend(cfg.backend, self.transcript) if cfg.backend is not None else None
        if self.backend is not None and hasattr(planner, "bind_backend"):
            planner.bind_backend(self.backend)
        planner.reset(scenario, self.guidance)

    @property
    def step_index(self) -> int:
        return len(self.records)

    def inject_feedback(self, text: str) -> tuple[bool, Optional[str]]:
        """Replan guidance from a feedback utterance at a step boundary."""
        if self.backend is None:
            return False, "no backend configured for guidance replanning"
        utterance = UserUtterance(text=text, step=self.step_index, channel="feedback")
        try:
            self.guidance = replan_guidance(self.guidance, utterance, self.backend)
        except GuidanceParseError as exc:
            self._pending_events.append({"type": "feedback_rejected", "text": text, "error": str(exc)})
            return False, str(exc)
        self._pending_events.append({"type": "feedback_applied", "text": text, "version": self.guidance.version})
        return True, None

    def step(self) -> Optional[StepRecord]:
        """Advance one tick; None once the episode is terminal."""
        if self.status != RUNNING:
            return None
        events: list[dict] = list(self._pending_events)
        self._pending_events = []
        w, g = self.world, self.guidance
        if self.backend is not None:
            self.backend.current_step = self.step_index

        t0 = time.perf_counter()
        try:
            decision = self.planner.decide(w, g)
        except Exception as exc:  # planner failure degrades, never aborts
            decision = PlannerDecision(action=STOP_ACTION)
            events.append({"type": "planner_error", "error": f"{type(exc).__name__}: {exc}"})
        elapsed = time.perf_counter() - t0
        if elapsed > self.cfg.step_budget_s:
            events.append({"type": "step_budget_exceeded", "elapsed_s": elapsed})
            decision = PlannerDecision(action=STOP_ACTION)
        events.extend(decision.events)

        gated = apply_norm_gate(decision.action, w, g)
        if gated is not decision.action:
            events.append({"type": "norm_gate_stop"})
        action = clip_action(gated, w.robot.v_pref)

        w2 = step_world(w, action, self.cfg.orca, self.cfg.robot_visible)
        reward = local_reward(w, action, w2, g, self.cfg.success_radius)
        report = detect_collisions(w2, g.social_distance)

        if report.any_hit:
            self.status = COLLISION
        elif episode_success(w2, g, self.cfg.success_radius):
            self.status = SUCCESS
        elif w2.time_step >= self.cfg.timeout_steps:
            self.status = TIMEOUT

        try:
            self.planner.observe(w, g, action, decision.weights, reward.total)
        except Exception as exc:
            events.append({"type": "planner_observe_error", "error": str(exc)})

        a_lm_doc = None
        if decision.a_lm is not None:
            lm = decision.a_lm
            a_lm_doc = {"vx": lm.action.vx, "vy": lm.action.vy, "parse_ok": lm.parse_ok}
        record = StepRecord(
            world=w,
            guidance=guidance_snapshot(g),
            a_rl=None if decision.a_rl is None else decision.a_rl.as_tuple(),
            a_lm=a_lm_doc,
            weights=decision.weights,
            action=action.as_tuple(),
            reward=reward,
            events=events,
            got=decision.got if self.cfg.record_got else None,
            status=self.status,
        )
        self.records.append(record)
        self.world = w2
        return record

    def finish(self) -> EpisodeLog:
        outcome = self.status if self.status != RUNNING else TIMEOUT
        nav_time = len(self.records) * self.world.dt
        return EpisodeLog(
            steps=self.records,
            outcome=outcome,
            nav_time=nav_time,
            task=self.guidance.task,
            seed=self.seed,
            transcript=self.transcript,
        )


def run_episode(
    scenario: WorldState,
    planner: Planner,
    feedback_script: Sequence[dict] | None,
    cfg: EpisodeConfig,
    seed: Optional[int] = None,
) -> EpisodeLog:
    """Run an episode to termination, delivering scripted feedback at step boundaries."""
    runner = EpisodeRunner(scenario, planner, cfg, seed=seed)
    by_step: dict[int, list[str]] = {}
    for item in feedback_script or []:
        by_step.setdefault(int(item["step"]), []).append(str(item["text"]))
    while runner.status == RUNNING:
        for text in by_step.get(runner.step_index, []):
            runner.inject_feedback(text)
        if runner.step() is None:
            break
    return runner.finish()


# -- log serialization -----------------------------------------------------


def step_to_json(s: StepRecord) -> dict:
    return {
        "t": s.world.time_step,
        "world": trajectory_record(s.world),
        "guidance": s.guidance,
        "a_rl": None if s.a_rl is None else [s.a_rl[0], s.a_rl[1]],
        "a_lm": s.a_lm,
        "weights": None if s.weights is None else [s.weights[0], s.weights[1]],
        "action": [s.action[0], s.action[1]],
        "reward": s.reward.to_json(),
        "events": s.events,
        "got": s.got,
        "status": s.status,
    }


def log_to_lines(log: EpisodeLog) -> list[str]:
    lines = [json.dumps(step_to_json(s)) for s in log.steps]
    final = {
        "outcome": log.outcome,
        "nav_time": log.nav_time,
        "steps": log.n_steps,
        "task": log.task,
        "seed": log.seed,
        "discomfort_fraction": log.discomfort_fraction(),
    }
    if log.task == HF:
        final["fov_fraction"] = log.fov_fraction()
    if log.transcript_ref:
        final["transcript_ref"] = log.transcript_ref
    lines.append(json.dumps({"final": final}))
    return lines


def write_log(log: EpisodeLog, path: str | Path) -> None:
    Path(path).write_text("\n".join(log_to_lines(log)) + "\n")


def write_episode_transcript(runner: EpisodeRunner, path: str | Path) -> None:
    write_transcript(runner.transcript, path)


def load_log_lines(path: str | Path) -> tuple[list[dict], dict]:
    steps: list[dict] = []
    final: dict = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if "final" in doc:
            final = doc["final"]
        else:
            steps.append(doc)
    return steps, final
