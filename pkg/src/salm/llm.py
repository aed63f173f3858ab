"""Pluggable LLM backends: OpenAI-compatible HTTP client and a deterministic mock.

The mock applies a versioned rule table to the prompt text so the whole
planner stack runs offline and reproducibly.  Every call can be recorded
into a per-episode transcript.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests

# Prompt contract markers.  Prompt builders embed these; the mock rule table
# keys on them to decide which reply template applies.
MARK_GUIDANCE = "OUTPUT CONTRACT: guidance-json"
MARK_GUIDANCE_UPDATE = "OUTPUT CONTRACT: guidance-update-json"
MARK_ACTION = "OUTPUT CONTRACT: action-json"
MARK_SCORE = "OUTPUT CONTRACT: score-in-unit-interval"

REQUEST_OPEN = "<<USER REQUEST>>"
REQUEST_CLOSE = "<<END REQUEST>>"
GUIDANCE_OPEN = "<<CURRENT GUIDANCE>>"
GUIDANCE_CLOSE = "<<END GUIDANCE>>"
EVIDENCE_OPEN = "<<EVIDENCE>>"
EVIDENCE_CLOSE = "<<END EVIDENCE>>"

UNRECOGNIZED = "UNRECOGNIZED"

_DATA_DIR = Path(__file__).parent / "data"


class BackendError(RuntimeError):
    """Transport or protocol failure talking to an LLM backend."""

    def __init__(self, message: str, status: Optional[int] = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body[:500]


class BackendTimeout(BackendError):
    """The backend did not answer within the configured timeout."""


@dataclass
class LlmBackend:
    kind: str = "mock"  # mock | http
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "SALM_API_KEY"  # key is only ever referenced via env
    rules_path: str = ""  # mock rule table; empty = packaged default
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown backend kind {self.kind!r}")

    @property
    def identity(self) -> str:
        if self.kind == "mock":
            return f"mock:{_load_rules(self.rules_path)['version']}"
        return f"http:{self.model}@{self.endpoint}"


@dataclass(frozen=True)
class CompletionResult:
    text: str
    retries: int
    latency_ms: float


@dataclass
class Transcript:
    """Append-only record of every backend call made during an episode."""

    entries: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def record(t: Transcript, entry: dict) -> Transcript:
    t.entries.append(dict(entry))
    return t


def write_transcript(t: Transcript, path: str | Path) -> None:
    lines = [json.dumps({"kind": "transcript", "version": 1})]
    lines.extend(json.dumps(e) for e in t.entries)
    Path(path).write_text("\n".join(lines) + "\n")


class RecordingBackend:
    """Wraps a backend so no call escapes the episode transcript."""

    def __init__(self, inner: LlmBackend, transcript: Transcript):
        self.inner = inner
        self.transcript = transcript
        self.current_step: int = 0

    @property
    def identity(self) -> str:
        return self.inner.identity

    def complete_ex(self, prompt: str, params: Optional[dict] = None, caller: str = "") -> CompletionResult:
        try:
            result = complete_ex(self.inner, prompt, params, caller=caller)
        except BackendError as exc:
            record(self.transcript, {
                "step": self.current_step, "caller": caller, "prompt": prompt,
                "reply": None, "error": str(exc), "latency_ms": 0.0, "retries": self.inner.max_retries,
            })
            raise
        record(self.transcript, {
            "step": self.current_step, "caller": caller, "prompt": prompt,
            "reply": result.text, "latency_ms": result.latency_ms, "retries": result.retries,
        })
        return result


def complete_ex(backend, prompt: str, params: Optional[dict] = None, caller: str = "") -> CompletionResult:
    """Single completion entry point; dispatches on backend kind or wrapper."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    handler = getattr(backend, "complete_ex", None)
    if handler is not None and not isinstance(backend, LlmBackend):
        return handler(prompt, params, caller=caller)
    if backend.kind == "mock":
        return CompletionResult(_mock_complete(backend, prompt), retries=0, latency_ms=0.0)
    return _http_complete(backend, prompt, params)


def complete(backend, prompt: str, params: Optional[dict] = None) -> str:
    return complete_ex(backend, prompt, params).text


# -- HTTP backend (OpenAI-compatible chat completions) ---------------------


def _http_complete(backend: LlmBackend, prompt: str, params: Optional[dict]) -> CompletionResult:
    body = {
        "model": backend.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": backend.temperature if params is None else params.get("temperature", backend.temperature),
    }
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(backend.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"

    t0 = time.perf_counter()
    last_error: Optional[BackendError] = None
    for attempt in range(backend.max_retries + 1):
        if attempt:
            time.sleep(min(0.5 * 2 ** (attempt - 1), 8.0))
        try:
            resp = requests.post(backend.endpoint, json=body, headers=headers, timeout=backend.timeout)
        except requests.Timeout:
            last_error = BackendTimeout(f"timeout after {backend.timeout}s")
            continue
        except requests.RequestException as exc:
            last_error = BackendError(f"transport error: {exc}")
            continue
        if resp.status_code >= 400:
            last_error = BackendError(f"HTTP {resp.status_code}", status=resp.status_code, body=resp.text)
            continue
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            last_error = BackendError(f"malformed completion payload: {exc}", body=resp.text)
            continue
        latency = (time.perf_counter() - t0) * 1000.0
        return CompletionResult(str(content), retries=attempt, latency_ms=latency)
    assert last_error is not None
    raise last_error


# -- mock backend ----------------------------------------------------------


_RULES_CACHE: dict[str, dict] = {}


def _load_rules(rules_path: str) -> dict:
    key = rules_path or "__default__"
    if key not in _RULES_CACHE:
        path = Path(rules_path) if rules_path else _DATA_DIR / "mock_rules.json"
        _RULES_CACHE[key] = json.loads(path.read_text())
    return _RULES_CACHE[key]


def _mock_complete(backend: LlmBackend, prompt: str) -> str:
    rules = _load_rules(backend.rules_path)
    for rule in rules["rules"]:
        if rule["marker"] in prompt:
            return _HANDLERS[rule["handler"]](prompt)
    return rules.get("fallback_reply", UNRECOGNIZED)


def _block(prompt: str, open_mark: str, close_mark: str) -> str:
    start = prompt.find(open_mark)
    if start < 0:
        return ""
    start += len(open_mark)
    end = prompt.find(close_mark, start)
    return prompt[start:end].strip() if end >= 0 else ""


_NUM = r"(-?\d+(?:\.\d+)?)"


def _extract_guidance_fields(text: str) -> dict:
    """Shared command grammar: task, target, distance, norm, stop distance."""
    low = text.lower()
    out: dict = {}
    m = re.search(rf"(?:go to|new goal)\s*\(\s*{_NUM}\s*,\s*{_NUM}\s*\)", low)
    if m:
        out["task"] = "p2p"
        out["target"] = [float(m.group(1)), float(m.group(2))]
    if re.search(r"\bfollow\b", low) or re.search(r"\b(bag|come to me)\b", low):
        out["task"] = "hf"
        out.setdefault("target", None)
    m = re.search(rf"keep\s+{_NUM}\s*m", low)
    if m:
        out["social_distance"] = float(m.group(1))
    if "too close" in low:
        out["social_distance"] = 1.5
    if re.search(r"right up|hand ?over|package|bag", low):
        out["social_distance"] = 0.0
    if re.search(r"pedestrian[- ]first|wait for (the )?pedestrian", low):
        out["norm"] = "pedestrian_first"
    elif re.search(r"robot[- ]first", low):
        out["norm"] = "robot_first"
    m = re.search(rf"stop(?:ping)? distance\s+(?:of\s+)?{_NUM}", low)
    if m:
        out["stop_distance"] = float(m.group(1))
    return out


def _mock_guidance_parse(prompt: str) -> str:
    text = _block(prompt, REQUEST_OPEN, REQUEST_CLOSE)
    fields = _extract_guidance_fields(text)
    if "task" not in fields:
        return UNRECOGNIZED
    doc = {
        "task": fields["task"],
        "target": fields.get("target"),
        "social_distance": fields.get("social_distance", 0.4),
        "norm": fields.get("norm", "robot_first"),
        "stop_distance": fields.get("stop_distance", 1.0),
    }
    return json.dumps(doc)


def _mock_guidance_replan(prompt: str) -> str:
    current_raw = _block(prompt, GUIDANCE_OPEN, GUIDANCE_CLOSE)
    text = _block(prompt, REQUEST_OPEN, REQUEST_CLOSE)
    try:
        doc = json.loads(current_raw)
    except ValueError:
        return UNRECOGNIZED
    fields = _extract_guidance_fields(text)
    if not fields:
        return UNRECOGNIZED
    if "target" in fields and fields["target"] is not None:
        doc["target"] = fields["target"]  # task deliberately unchanged on goal updates
    for key in ("social_distance", "norm", "stop_distance"):
        if key in fields:
            doc[key] = fields[key]
    return json.dumps(doc)


def _mock_lnm_action(prompt: str) -> str:
    """Goal-direction unit vector from the encoded state text; ignores the crowd."""
    robot = re.search(rf"Robot: position \({_NUM}, {_NUM}\)", prompt)
    target = re.search(rf"Target: \({_NUM}, {_NUM}\)", prompt)
    vp = re.search(rf"preferred speed {_NUM} m/s", prompt)
    if not (robot and target and vp):
        return UNRECOGNIZED
    px, py = float(robot.group(1)), float(robot.group(2))
    tx, ty = float(target.group(1)), float(target.group(2))
    v_pref = float(vp.group(1))
    dx, dy = tx - px, ty - py
    dist = math.hypot(dx, dy)
    if dist < 0.05:
        return json.dumps({"vx": 0.0, "vy": 0.0, "why": "at target"})
    return json.dumps({
        "vx": round(dx / dist * v_pref, 4),
        "vy": round(dy / dist * v_pref, 4),
        "why": "heading straight to target",
    })


def _mock_lfm_score(prompt: str) -> str:
    """Collision-lookahead rule on the checklist evidence embedded in the prompt."""
    raw = _block(prompt, EVIDENCE_OPEN, EVIDENCE_CLOSE)
    try:
        ev = json.loads(raw)
    except ValueError:
        return "0.5"
    sep = ev.get("next_min_separation")
    d = float(ev.get("social_distance", 0.0))
    if sep is None:
        return "0.9"
    sep = float(sep)
    if sep < 0.0:
        return "0.0"
    if sep >= d:
        return "0.9"
    return "0.4"


_HANDLERS = {
    "guidance_parse": _mock_guidance_parse,
    "guidance_replan": _mock_guidance_replan,
    "lnm_goal_vector": _mock_lnm_action,
    "lfm_lookahead_score": _mock_lfm_score,
}
