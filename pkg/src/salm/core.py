"""Shared domain types: agents, world snapshots, actions, and scenario files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

Vec2 = tuple[float, float]

ROBOT = "robot"
USER = "user"
PEDESTRIAN = "pedestrian"
AGENT_KINDS = (ROBOT, USER, PEDESTRIAN)

SCENARIO_SCHEMA = "salm-scenario/1"

# Declared simulation defaults (conventional crowd-navigation settings).
DEFAULT_DT = 0.25
DEFAULT_ARENA_RADIUS = 6.0
DEFAULT_AGENT_RADIUS = 0.3
DEFAULT_V_PREF = 1.0

_SPEED_TOL = 1e-9


class MalformedActionError(ValueError):
    """An action with non-finite components was produced or supplied."""


class ScenarioError(ValueError):
    """A scenario file or generated scenario is invalid."""


def vec_sub(a: Vec2, b: Vec2) -> Vec2:
    return (a[0] - b[0], a[1] - b[1])


def vec_add(a: Vec2, b: Vec2) -> Vec2:
    return (a[0] + b[0], a[1] + b[1])


def vec_scale(a: Vec2, s: float) -> Vec2:
    return (a[0] * s, a[1] * s)


def vec_norm(a: Vec2) -> float:
    return math.hypot(a[0], a[1])


def vec_dist(a: Vec2, b: Vec2) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def vec_dot(a: Vec2, b: Vec2) -> float:
    return a[0] * b[0] + a[1] * b[1]


def vec_det(a: Vec2, b: Vec2) -> float:
    return a[0] * b[1] - a[1] * b[0]


def vec_finite(a: Vec2) -> bool:
    return math.isfinite(a[0]) and math.isfinite(a[1])


@dataclass(frozen=True)
class LocalAction:
    """A commanded velocity in m/s."""

    vx: float
    vy: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.vx) and math.isfinite(self.vy)):
            raise MalformedActionError(f"non-finite action ({self.vx}, {self.vy})")

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def as_tuple(self) -> Vec2:
        return (self.vx, self.vy)


STOP_ACTION = LocalAction(0.0, 0.0)


@dataclass(frozen=True)
class MacroAction:
    """A high-level directive: a waypoint, a stop, or a tagged operation."""

    kind: str  # waypoint | stop | operation-tag
    waypoint: Optional[Vec2] = None
    label: str = ""

    def __post_init__(self) -> None:
        if (self.kind == "waypoint") != (self.waypoint is not None):
            raise ValueError("waypoint present iff kind == 'waypoint'")


@dataclass(frozen=True)
class ObservableState:
    """What a robot can estimate about another agent: pose, velocity, size."""

    position: Vec2
    velocity: Vec2
    radius: float


@dataclass(frozen=True)
class AgentState:
    id: int
    kind: str
    position: Vec2
    velocity: Vec2
    radius: float
    goal: Vec2
    v_pref: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if self.v_pref <= 0:
            raise ValueError("v_pref must be > 0")
        if not (vec_finite(self.position) and vec_finite(self.velocity) and vec_finite(self.goal)):
            raise ValueError("agent state must be finite")
        if vec_norm(self.velocity) > self.v_pref + _SPEED_TOL:
            raise ValueError(f"|velocity| {vec_norm(self.velocity):.6f} exceeds v_pref {self.v_pref}")

    def moved(self, position: Vec2, velocity: Vec2) -> "AgentState":
        """New state after an integration step; heading follows nonzero velocity."""
        heading = math.atan2(velocity[1], velocity[0]) if vec_norm(velocity) > _SPEED_TOL else self.heading
        return replace(self, position=position, velocity=velocity, heading=heading)

    def dist_to_goal(self) -> float:
        return vec_dist(self.position, self.goal)


@dataclass(frozen=True)
class WorldState:
    time_step: int
    dt: float
    robot: AgentState
    user: Optional[AgentState]
    pedestrians: tuple[AgentState, ...]
    arena_radius: float

    def __post_init__(self) -> None:
        if self.time_step < 0:
            raise ValueError("time_step must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        ids = [a.id for a in self.agents()]
        if len(ids) != len(set(ids)):
            raise ValueError("agent ids must be unique")

    def agents(self) -> Iterator[AgentState]:
        yield self.robot
        if self.user is not None:
            yield self.user
        yield from self.pedestrians

    def humans(self) -> Iterator[AgentState]:
        """Everyone except the robot."""
        if self.user is not None:
            yield self.user
        yield from self.pedestrians


def observable_projection(agent: AgentState) -> ObservableState:
    """Project an agent down to what the robot can estimate (no goal, no v_pref)."""
    return ObservableState(position=agent.position, velocity=agent.velocity, radius=agent.radius)


def clip_action(a: LocalAction, v_pref: float) -> LocalAction:
    """Scale an action down to the preferred-speed ball, direction preserved.

    Also normalizes signed zeros so equal actions serialize identically.
    """
    if v_pref <= 0:
        raise ValueError("v_pref must be > 0")
    speed = a.speed
    # The relative slack absorbs the one-ulp overshoot of rescaling, making
    # clipping exactly idempotent.
    if speed <= v_pref * (1.0 + 1e-12):
        return LocalAction(a.vx + 0.0, a.vy + 0.0)
    s = v_pref / speed
    return LocalAction(a.vx * s, a.vy * s)


# -- scenario files ------------------------------------------------------


def _agent_to_json(a: AgentState) -> dict:
    return {
        "id": a.id,
        "kind": a.kind,
        "position": [a.position[0], a.position[1]],
        "velocity": [a.velocity[0], a.velocity[1]],
        "goal": [a.goal[0], a.goal[1]],
        "radius": a.radius,
        "v_pref": a.v_pref,
        "heading": a.heading,
    }


def _agent_from_json(doc: dict) -> AgentState:
    try:
        return AgentState(
            id=int(doc["id"]),
            kind=str(doc["kind"]),
            position=(float(doc["position"][0]), float(doc["position"][1])),
            velocity=(float(doc.get("velocity", [0.0, 0.0])[0]), float(doc.get("velocity", [0.0, 0.0])[1])),
            radius=float(doc["radius"]),
            goal=(float(doc["goal"][0]), float(doc["goal"][1])),
            v_pref=float(doc["v_pref"]),
            heading=float(doc.get("heading", 0.0)),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad agent record: {exc}") from exc


def scenario_to_json(w: WorldState) -> dict:
    return {
        "schema": SCENARIO_SCHEMA,
        "arena_radius": w.arena_radius,
        "dt": w.dt,
        "agents": [_agent_to_json(a) for a in w.agents()],
    }


def scenario_from_json(doc: dict) -> WorldState:
    if doc.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {doc.get('schema')!r}")
    agents = [_agent_from_json(a) for a in doc.get("agents", [])]
    robots = [a for a in agents if a.kind == ROBOT]
    users = [a for a in agents if a.kind == USER]
    if len(robots) != 1:
        raise ScenarioError("scenario must contain exactly one robot")
    if len(users) > 1:
        raise ScenarioError("scenario may contain at most one user")
    peds = tuple(a for a in agents if a.kind == PEDESTRIAN)
    return WorldState(
        time_step=0,
        dt=float(doc["dt"]),
        robot=robots[0],
        user=users[0] if users else None,
        pedestrians=peds,
        arena_radius=float(doc["arena_radius"]),
    )


def save_scenario(w: WorldState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(w), indent=2) + "\n")


def load_scenario(path: str | Path) -> WorldState:
    return scenario_from_json(json.loads(Path(path).read_text()))
