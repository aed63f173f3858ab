"""Parsing user language into global guidance, and replanning it on feedback."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, replace
from typing import Optional

from .core import Vec2
from .llm import (
    GUIDANCE_CLOSE,
    GUIDANCE_OPEN,
    MARK_GUIDANCE,
    MARK_GUIDANCE_UPDATE,
    REQUEST_CLOSE,
    REQUEST_OPEN,
    BackendError,
    complete_ex,
)

log = logging.getLogger(__name__)

P2P = "p2p"
HF = "hf"
PEDESTRIAN_FIRST = "pedestrian_first"
ROBOT_FIRST = "robot_first"

DEFAULT_SOCIAL_DISTANCE = 0.4
DEFAULT_STOP_DISTANCE = 1.0
MAX_SOCIAL_DISTANCE = 5.0

GUIDANCE_SCHEMA = (
    '{"task":"p2p"|"hf","target":[x,y]|null,"social_distance":number,'
    '"norm":"pedestrian_first"|"robot_first","stop_distance":number}'
)


class GuidanceParseError(ValueError):
    """The backend could not produce a valid guidance object."""


@dataclass(frozen=True)
class UserUtterance:
    text: str
    step: int = 0
    channel: str = "initial_request"  # initial_request | feedback

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("utterance text must be non-empty")


@dataclass(frozen=True)
class GlobalGuidance:
    """Task objective, social preferences, and norm flags steering all planners."""

    task: str  # p2p | hf
    target: Optional[Vec2]
    social_distance: float
    norm: str
    stop_distance: float
    version: int = 1
    raw_text: str = ""

    def __post_init__(self) -> None:
        if self.task not in (P2P, HF):
            raise ValueError(f"unknown task {self.task!r}")
        if self.norm not in (PEDESTRIAN_FIRST, ROBOT_FIRST):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.social_distance < 0 or self.stop_distance < 0:
            raise ValueError("distances must be >= 0")
        if self.task == P2P and self.target is None:
            raise ValueError("p2p guidance requires a target")
        if self.version < 1:
            raise ValueError("version starts at 1")

    @property
    def follow_offset(self) -> float:
        """How far behind the user the follow target sits."""
        return max(self.social_distance, 0.5)

    def to_schema_json(self) -> dict:
        return {
            "task": self.task,
            "target": None if self.target is None else [self.target[0], self.target[1]],
            "social_distance": self.social_distance,
            "norm": self.norm,
            "stop_distance": self.stop_distance,
        }


def _validate_guidance_doc(doc: object) -> dict:
    if not isinstance(doc, dict):
        raise GuidanceParseError("guidance reply is not a JSON object")
    task = doc.get("task")
    if task not in (P2P, HF):
        raise GuidanceParseError(f"bad task {task!r}")
    target = doc.get("target")
    if target is not None:
        if (not isinstance(target, (list, tuple)) or len(target) != 2
                or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in target)):
            raise GuidanceParseError(f"bad target {target!r}")
    if task == P2P and target is None:
        raise GuidanceParseError("p2p requires a numeric target")
    d = doc.get("social_distance")
    if not isinstance(d, (int, float)) or not math.isfinite(d):
        raise GuidanceParseError(f"bad social_distance {d!r}")
    norm = doc.get("norm", ROBOT_FIRST)
    if norm not in (PEDESTRIAN_FIRST, ROBOT_FIRST):
        raise GuidanceParseError(f"bad norm {norm!r}")
    ds = doc.get("stop_distance", DEFAULT_STOP_DISTANCE)
    if not isinstance(ds, (int, float)) or not math.isfinite(ds) or ds < 0:
        raise GuidanceParseError(f"bad stop_distance {ds!r}")
    d = float(d)
    if d < 0 or d > MAX_SOCIAL_DISTANCE:
        clamped = min(max(d, 0.0), MAX_SOCIAL_DISTANCE)
        log.warning("social_distance %.2f out of range, clamped to %.2f", d, clamped)
        d = clamped
    return {
        "task": task,
        "target": None if target is None else (float(target[0]), float(target[1])),
        "social_distance": d,
        "norm": norm,
        "stop_distance": float(ds),
    }


def _reply_to_doc(reply: str) -> dict:
    try:
        return _validate_guidance_doc(json.loads(reply.strip()))
    except ValueError:
        pass
    m = re.search(r"\{.*\}", reply, re.DOTALL)
    if not m:
        raise GuidanceParseError(f"no JSON object in reply: {reply[:80]!r}")
    try:
        return _validate_guidance_doc(json.loads(m.group(0)))
    except json.JSONDecodeError as exc:
        raise GuidanceParseError(f"unparseable JSON in reply: {exc}") from exc


def _ask(llm, prompt: str, caller: str) -> dict:
    last: Exception | None = None
    for _ in range(3):  # initial attempt + 2 retries on bad output
        try:
            reply = complete_ex(llm, prompt, caller=caller).text
        except BackendError as exc:
            last = exc
            continue
        try:
            return _reply_to_doc(reply)
        except GuidanceParseError as exc:
            last = exc
    raise GuidanceParseError(f"guidance parsing failed after retries: {last}")


def _parse_prompt(text: str) -> str:
    return (
        "You translate a user's navigation request into a strict JSON object.\n"
        f"Schema: {GUIDANCE_SCHEMA}\n"
        "Task p2p needs a numeric target; task hf follows the user (target null).\n"
        "Distances are meters. Answer with the JSON object only.\n"
        f"## {MARK_GUIDANCE}\n"
        f"{REQUEST_OPEN}\n{text}\n{REQUEST_CLOSE}\n"
    )


def _replan_prompt(current: GlobalGuidance, text: str) -> str:
    return (
        "Update the current guidance JSON from the user's feedback. Keep fields\n"
        "the feedback does not mention. Answer with the full JSON object only.\n"
        f"Schema: {GUIDANCE_SCHEMA}\n"
        f"## {MARK_GUIDANCE_UPDATE}\n"
        f"{GUIDANCE_OPEN}{json.dumps(current.to_schema_json())}{GUIDANCE_CLOSE}\n"
        f"{REQUEST_OPEN}\n{text}\n{REQUEST_CLOSE}\n"
    )


def parse_request(u: UserUtterance, llm) -> GlobalGuidance:
    """First LLM stage: a fresh guidance object (version 1) from a user request."""
    doc = _ask(llm, _parse_prompt(u.text), caller="guidance")
    return GlobalGuidance(version=1, raw_text=u.text, **doc)


def replan_guidance(current: GlobalGuidance, u: UserUtterance, llm) -> GlobalGuidance:
    """Feedback-driven update; carries unchanged fields over and bumps the version."""
    if u.channel != "feedback":
        raise ValueError("replan_guidance expects a feedback utterance")
    doc = _ask(llm, _replan_prompt(current, u.text), caller="guidance")
    return GlobalGuidance(version=current.version + 1, raw_text=u.text, **doc)


def guidance_to_text(g: GlobalGuidance) -> str:
    """Canonical guidance rendering used verbatim in prompt section T_G."""
    if g.task == P2P:
        assert g.target is not None
        task_line = f"Task: point-to-point navigation to ({g.target[0]:.1f}, {g.target[1]:.1f})."
    else:
        task_line = f"Task: follow the user, staying about {g.follow_offset:.1f} m behind them."
    norm_line = (
        f"Norm: pedestrian-first; come to a full stop whenever a pedestrian is within {g.stop_distance:.1f} m."
        if g.norm == PEDESTRIAN_FIRST
        else "Norm: robot-first; no mandatory stops."
    )
    return "\n".join([
        task_line,
        f"Preferred social distance: {g.social_distance:.1f} m.",
        norm_line,
    ])


def guidance_snapshot(g: GlobalGuidance) -> dict:
    """Compact per-step log record of the active guidance."""
    doc = g.to_schema_json()
    doc["version"] = g.version
    return doc


def guidance_from_snapshot(doc: dict) -> GlobalGuidance:
    target = doc.get("target")
    return GlobalGuidance(
        task=doc["task"],
        target=None if target is None else (float(target[0]), float(target[1])),
        social_distance=float(doc["social_distance"]),
        norm=doc["norm"],
        stop_distance=float(doc["stop_distance"]),
        version=int(doc.get("version", 1)),
    )


def bump_version(g: GlobalGuidance) -> GlobalGuidance:
    return replace(g, version=g.version + 1)
