"""Live human-in-the-loop session server.

One episode per session, advanced in real time by a driver task; clients
steer it over a WebSocket with versioned JSON messages ("salm-wire/1") and
fetch artifacts over plain HTTP.
"""

from __future__ import annotations

import asyncio
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .core import ScenarioError
from .episode import EpisodeConfig, EpisodeRunner, RUNNING, StepRecord, log_to_lines
from .evaluation import initial_command
from .guidance import GuidanceParseError, UserUtterance, parse_request
from .llm import LlmBackend
from .planners import PLANNER_NAMES, PlannerConfig, build_planner
from .sim import spawn_scenario, trajectory_record

WIRE_VERSION = "salm-wire/1"


@dataclass
class ServerConfig:
    max_sessions: int = 8
    grace_timeout_s: float = 60.0
    default_rate: float = 4.0  # steps per second
    log_dir: Optional[str] = None  # persist finished/abandoned episode logs here


@dataclass
class Session:
    id: str
    runner: EpisodeRunner
    rate: float
    paused: bool = True
    seq: int = 0
    clients: list[WebSocket] = field(default_factory=list)
    commands: asyncio.Queue = field(default_factory=asyncio.Queue)
    resume_event: asyncio.Event = field(default_factory=asyncio.Event)
    driver: Optional[asyncio.Task] = None
    finished: bool = False
    last_client_seen: float = field(default_factory=time.monotonic)

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


def _state_update(session: Session, record: Optional[StepRecord]) -> dict:
    runner = session.runner
    world = runner.world
    from .episode import current_target

    target = current_target(runner.guidance, world)
    msg = {
        "type": "state_update",
        "wire": WIRE_VERSION,
        "session": session.id,
        "seq": session.next_seq(),
        "state": trajectory_record(world, record.events if record else []),
        "target": [target[0], target[1]],
        "social_distance": runner.guidance.social_distance,
        "guidance_version": runner.guidance.version,
        "status": runner.status,
        "paused": session.paused,
    }
    if record is not None:
        msg["weights"] = None if record.weights is None else list(record.weights)
        msg["action"] = list(record.action)
        msg["reward"] = record.reward.total
    return msg


def _guidance_update(session: Session) -> dict:
    g = session.runner.guidance
    doc = g.to_schema_json()
    doc["version"] = g.version
    return {
        "type": "guidance_update", "wire": WIRE_VERSION, "session": session.id,
        "seq": session.next_seq(), "guidance": doc,
    }


def _got_summary(session: Session, record: StepRecord) -> Optional[dict]:
    if not record.got:
        return None
    weights = record.weights or (None, None)
    return {
        "type": "got_summary", "session": session.id, "seq": session.next_seq(),
        "step": record.world.time_step, "s1": weights[0], "s2": weights[1],
        "vertex_count": len(record.got.get("vertices", [])),
    }


def _episode_end(session: Session) -> dict:
    log = session.runner.finish()
    return {
        "type": "episode_end", "session": session.id, "seq": session.next_seq(),
        "outcome": log.outcome, "nav_time": log.nav_time, "steps": log.n_steps,
        "discomfort_fraction": log.discomfort_fraction(),
    }


def _error_msg(session: Session, message: str, code: str = "bad_request") -> dict:
    return {
        "type": "error", "session": session.id, "seq": session.next_seq(),
        "code": code, "message": message,
    }


async def _broadcast(session: Session, msg: dict) -> None:
    text = json.dumps(msg)
    stale: list[WebSocket] = []
    for ws in session.clients:
        try:
            await ws.send_text(text)
        except Exception:
            stale.append(ws)
    for ws in stale:
        if ws in session.clients:
            session.clients.remove(ws)


async def _apply_commands(session: Session) -> None:
    while not session.commands.empty():
        text = session.commands.get_nowait()
        ok, error = session.runner.inject_feedback(text)
        if ok:
            await _broadcast(session, _guidance_update(session))
        else:
            await _broadcast(session, _error_msg(session, f"command rejected: {error}", "command_rejected"))


def _persist_log(session: Session, cfg: ServerConfig) -> None:
    if not cfg.log_dir:
        return
    try:
        out = Path(cfg.log_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{session.id}.jsonl").write_text("\n".join(log_to_lines(session.runner.finish())) + "\n")
    except OSError:
        pass  # the in-memory log stays downloadable


async def _driver_loop(session: Session, cfg: ServerConfig) -> None:
    runner = session.runner
    try:
        while runner.status == RUNNING:
            if session.paused:
                session.resume_event.clear()
                try:
                    await asyncio.wait_for(session.resume_event.wait(), timeout=cfg.grace_timeout_s)
                except asyncio.TimeoutError:
                    if not session.clients:
                        break  # abandoned while paused
                    continue
            if not session.clients and time.monotonic() - session.last_client_seen > cfg.grace_timeout_s:
                break  # abandoned mid-run: persist what we have
            await _apply_commands(session)
            record = runner.step()
            if record is None:
                break
            await _broadcast(session, _state_update(session, record))
            got = _got_summary(session, record)
            if got is not None:
                await _broadcast(session, got)
            await asyncio.sleep(1.0 / session.rate)
        await _broadcast(session, _episode_end(session))
    finally:
        session.finished = True
        _persist_log(session, cfg)


def create_app(cfg: ServerConfig = ServerConfig()) -> FastAPI:
    app = FastAPI(title="salm session service")
    sessions: dict[str, Session] = {}
    counter = {"n": 0}

    def _new_session_id() -> str:
        counter["n"] += 1
        return f"s{counter['n']}"

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok", "wire": WIRE_VERSION, "sessions": len(sessions)}

    @app.post("/sessions")
    async def create_session(body: dict) -> JSONResponse:
        if len(sessions) >= cfg.max_sessions:
            return JSONResponse({"error": "session limit reached"}, status_code=429)
        planner_name = body.get("planner", "SALM")
        if planner_name not in PLANNER_NAMES:
            return JSONResponse({"error": f"unknown planner {planner_name!r}"}, status_code=400)
        backend_kind = body.get("backend", "mock")
        if backend_kind not in ("mock", "http"):
            return JSONResponse({"error": f"unknown backend {backend_kind!r}"}, status_code=400)
        try:
            seed = int(body.get("seed", 7))
            task = body.get("task", "p2p")
            n_peds = int(body.get("n_pedestrians", 10))
            scenario = spawn_scenario(seed, n_peds, task)
        except (ScenarioError, ValueError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        backend = LlmBackend(kind=backend_kind, endpoint=body.get("endpoint", ""), model=body.get("model", ""))
        command = body.get("command") or initial_command(task, scenario)
        try:
            guidance = parse_request(UserUtterance(text=command), backend)
        except GuidanceParseError as exc:
            return JSONResponse({"error": f"cannot parse initial command: {exc}"}, status_code=400)
        planner_cfg = PlannerConfig(name=planner_name, backend=backend)
        runner = EpisodeRunner(scenario, build_planner(planner_cfg),
                               EpisodeConfig(guidance=guidance, backend=backend), seed=seed)
        session = Session(id=_new_session_id(), runner=runner, rate=float(body.get("rate", cfg.default_rate)))
        sessions[session.id] = session
        session.driver = asyncio.create_task(_driver_loop(session, cfg))
        return JSONResponse({"session_id": session.id, "wire": WIRE_VERSION, "paused": True})

    @app.get("/sessions/{session_id}/log")
    async def get_log(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            return JSONResponse({"error": "no such session"}, status_code=404)
        log = session.runner.finish()
        return PlainTextResponse("\n".join(log_to_lines(log)) + "\n", media_type="application/jsonl")

    @app.websocket("/sessions/{session_id}/ws")
    async def session_ws(ws: WebSocket, session_id: str) -> None:
        session = sessions.get(session_id)
        if session is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        session.clients.append(ws)
        session.last_client_seen = time.monotonic()
        await ws.send_text(json.dumps(_state_update(session, None)))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except ValueError:
                    await ws.send_text(json.dumps(_error_msg(session, "invalid JSON")))
                    continue
                kind = msg.get("type")
                if kind in ("start", "resume"):
                    session.paused = False
                    session.resume_event.set()
                elif kind == "pause":
                    session.paused = True
                elif kind == "set_rate":
                    try:
                        rate = float(msg.get("rate", session.rate))
                        if not 0.1 <= rate <= 100.0:
                            raise ValueError(rate)
                        session.rate = rate
                    except (TypeError, ValueError):
                        await ws.send_text(json.dumps(_error_msg(session, "bad rate")))
                elif kind == "command":
                    text = str(msg.get("text", "")).strip()
                    if not text:
                        await ws.send_text(json.dumps(_error_msg(session, "empty command")))
                    else:
                        await session.commands.put(text)
                        await ws.send_text(json.dumps({
                            "type": "ack", "session": session.id, "seq": session.next_seq(),
                            "command": text,
                        }))
                else:
                    await ws.send_text(json.dumps(_error_msg(session, f"unknown message type {kind!r}")))
        except WebSocketDisconnect:
            pass
        finally:
            if ws in session.clients:
                session.clients.remove(ws)
            session.last_client_seen = time.monotonic()

    # Serve the companion web client when it sits next to a source checkout.
    frontend = Path(__file__).resolve().parents[2] / "frontend"
    if (frontend / "index.html").exists():
        app.mount("/app", StaticFiles(directory=frontend, html=True), name="frontend")

    return app


app = create_app()
