"""The language navigation model: state-to-text encoding, five-part prompt
assembly, a bounded memory of executed steps, and action parsing."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .core import LocalAction, STOP_ACTION, WorldState, clip_action, vec_dist, vec_norm
from .episode import current_target
from .guidance import GlobalGuidance, guidance_to_text
from .llm import BackendError, complete_ex

_TEMPLATE_DIR = Path(__file__).parent / "data" / "templates"
_TEMPLATE_FILES = {"task": "t_task.txt", "data": "t_data.txt", "additional": "t_additional.txt"}

DEMO_STEPS = 4
MEMORY_CAPACITY = 8
DEMONSTRATION = "demonstration"
HISTORICAL = "historical"


class TemplateError(RuntimeError):
    """A prompt template is missing or malformed (configuration error)."""


@dataclass(frozen=True)
class PromptBundle:
    """The five prompt sections plus the encoded state, in fixed order."""

    t_task: str
    t_guidance: str
    t_data: str
    t_history: str
    t_additional: str
    state_text: str

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value:
                raise ValueError(f"prompt section {name} must be non-empty")

    def concat(self) -> str:
        return "\n".join([
            "=== TASK ===", self.t_task,
            "=== GLOBAL GUIDANCE ===", self.t_guidance,
            "=== DATA ANNOTATION ===", self.t_data,
            "=== HISTORY ===", self.t_history,
            "=== ADDITIONAL ===", self.t_additional,
            "=== CURRENT STATE ===", self.state_text,
        ])


@dataclass(frozen=True)
class MemoryRecord:
    state_text: str  # compact robot/target line
    action: tuple[float, float]
    weights: tuple[float, float]
    reward: float
    is_demo: bool = False


@dataclass(frozen=True)
class MemoryBuffer:
    records: tuple[MemoryRecord, ...]
    capacity: int = MEMORY_CAPACITY

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if len(self.records) > self.capacity:
            raise ValueError("buffer over capacity")

    @property
    def phase(self) -> str:
        return DEMONSTRATION if any(r.is_demo for r in self.records) else HISTORICAL


@dataclass(frozen=True)
class LmAction:
    action: LocalAction
    rationale: str = ""
    parse_ok: bool = True


def load_templates(template_dir: Path | str | None = None) -> dict[str, str]:
    """Read prompt templates; raises at startup, never mid-episode."""
    base = Path(template_dir) if template_dir else _TEMPLATE_DIR
    out: dict[str, str] = {}
    for key, fname in _TEMPLATE_FILES.items():
        path = base / fname
        if not path.exists():
            raise TemplateError(f"missing prompt template {path}")
        out[key] = path.read_text()
    return out


def summarize_state(w: WorldState, g: GlobalGuidance) -> str:
    """One-line robot/target summary used in memory records."""
    tx, ty = current_target(g, w)
    r = w.robot
    return (
        f"robot ({r.position[0]:.1f}, {r.position[1]:.1f}) "
        f"vel ({r.velocity[0]:.1f}, {r.velocity[1]:.1f}) target ({tx:.1f}, {ty:.1f})"
    )


def encode_state_to_text(w: WorldState, g: GlobalGuidance) -> str:
    """Deterministic textual scene description with one-decimal formatting.

    Coarse fixed-point keeps the token stream stable and the goldens exact.
    """
    r = w.robot
    tx, ty = current_target(g, w)
    lines = [
        f"Robot: position ({r.position[0]:.1f}, {r.position[1]:.1f}), "
        f"velocity ({r.velocity[0]:.1f}, {r.velocity[1]:.1f}), radius {r.radius:.1f}, "
        f"preferred speed {r.v_pref:.1f} m/s.",
        f"Target: ({tx:.1f}, {ty:.1f}). Social distance: {g.social_distance:.1f} m.",
    ]
    if w.user is not None:
        u = w.user
        lines.append(
            f"User {u.id}: position ({u.position[0]:.1f}, {u.position[1]:.1f}), "
            f"velocity ({u.velocity[0]:.1f}, {u.velocity[1]:.1f}), radius {u.radius:.1f}."
        )
    for p in sorted(w.pedestrians, key=lambda a: a.id):
        lines.append(
            f"Pedestrian {p.id}: position ({p.position[0]:.1f}, {p.position[1]:.1f}), "
            f"velocity ({p.velocity[0]:.1f}, {p.velocity[1]:.1f}), radius {p.radius:.1f}."
        )
    return "\n".join(lines)


def demonstration_records(scenario: WorldState, g: GlobalGuidance, steps: int = DEMO_STEPS) -> tuple[MemoryRecord, ...]:
    """Synthetic goal-directed steps seeding the history section of a fresh episode."""
    r = scenario.robot
    tx, ty = current_target(g, scenario)
    dx, dy = tx - r.position[0], ty - r.position[1]
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        ux, uy = 0.0, 0.0
    else:
        ux, uy = dx / dist * r.v_pref, dy / dist * r.v_pref
    records = []
    for k in range(steps):
        px = r.position[0] + ux * scenario.dt * k
        py = r.position[1] + uy * scenario.dt * k
        records.append(MemoryRecord(
            state_text=f"robot ({px:.1f}, {py:.1f}) vel ({ux:.1f}, {uy:.1f}) target ({tx:.1f}, {ty:.1f})",
            action=(ux, uy),
            weights=(0.5, 0.5),
            reward=round(r.v_pref * scenario.dt, 4),
            is_demo=True,
        ))
    return tuple(records)


def new_memory(scenario: WorldState, g: GlobalGuidance, capacity: int = MEMORY_CAPACITY) -> MemoryBuffer:
    return MemoryBuffer(records=demonstration_records(scenario, g), capacity=capacity)


def update_memory(m: MemoryBuffer, record: MemoryRecord) -> MemoryBuffer:
    """Append one step record, evicting the oldest beyond capacity (FIFO)."""
    records = (m.records + (record,))[-m.capacity:]
    return replace(m, records=records)


def render_memory(m: MemoryBuffer) -> str:
    if not m.records:
        return "No executed steps yet."
    header = (
        "Demonstration trajectory (synthetic, goal-directed):"
        if m.phase == DEMONSTRATION
        else "Recent executed steps (most recent last):"
    )
    lines = [header]
    for i, rec in enumerate(m.records):
        tag = "demo" if rec.is_demo else "step"
        lines.append(
            f"- {tag} {i}: {rec.state_text}; action ({rec.action[0]:.2f}, {rec.action[1]:.2f}); "
            f"weights ({rec.weights[0]:.2f}, {rec.weights[1]:.2f}); reward {rec.reward:.2f}"
        )
    return "\n".join(lines)


def assemble_prompt(
    g: GlobalGuidance,
    memory: MemoryBuffer,
    w: WorldState,
    templates: dict[str, str],
) -> PromptBundle:
    """Deterministic five-section prompt; same inputs give a byte-identical bundle."""
    fmt = {
        "arena_radius": f"{w.arena_radius:.1f}",
        "dt": f"{w.dt:.2f}",
        "robot_radius": f"{w.robot.radius:.1f}",
        "v_pref": f"{w.robot.v_pref:.1f}",
        "map_min": f"{-w.arena_radius - 1.0:.1f}",
        "map_max": f"{w.arena_radius + 1.0:.1f}",
    }
    try:
        t_task = templates["task"].format(**fmt).strip()
        t_data = templates["data"].format(**fmt).strip()
        t_additional = templates["additional"].format(**fmt).strip()
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"bad template placeholder: {exc}") from exc
    return PromptBundle(
        t_task=t_task,
        t_guidance=guidance_to_text(g),
        t_data=t_data,
        t_history=render_memory(memory),
        t_additional=t_additional,
        state_text=encode_state_to_text(w, g),
    )


def _parse_action_reply(reply: str, v_pref: float) -> Optional[LmAction]:
    doc = None
    try:
        doc = json.loads(reply.strip())
    except ValueError:
        m = re.search(r"\{.*?\}", reply, re.DOTALL)
        if m:
            try:
                doc = json.loads(m.group(0))
            except ValueError:
                doc = None
    if not isinstance(doc, dict):
        return None
    vx, vy = doc.get("vx"), doc.get("vy")
    if not isinstance(vx, (int, float)) or not isinstance(vy, (int, float)):
        return None
    if not (math.isfinite(vx) and math.isfinite(vy)):
        return None
    action = clip_action(LocalAction(float(vx), float(vy)), v_pref)
    return LmAction(action=action, rationale=str(doc.get("why", "")), parse_ok=True)


def query_action(p: PromptBundle, llm, v_pref: float) -> LmAction:
    """Ask the backend for a velocity; degrade to a flagged stop on any failure."""
    prompt = p.concat()
    for _ in range(2):  # one retry on unparseable output
        try:
            reply = complete_ex(llm, prompt, caller="lnm").text
        except BackendError:
            return LmAction(action=STOP_ACTION, rationale="backend error", parse_ok=False)
        parsed = _parse_action_reply(reply, v_pref)
        if parsed is not None:
            return parsed
    return LmAction(action=STOP_ACTION, rationale="unparseable reply", parse_ok=False)
