"""Deterministic world stepping, collision reporting, and seeded scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_AGENT_RADIUS,
    DEFAULT_ARENA_RADIUS,
    DEFAULT_DT,
    DEFAULT_V_PREF,
    PEDESTRIAN,
    ROBOT,
    USER,
    AgentState,
    LocalAction,
    ScenarioError,
    Vec2,
    WorldState,
    observable_projection,
    vec_dist,
)
from .orca import OrcaParams, orca_velocity

_MIN_SPAWN_GAP = 0.1
_SPAWN_RETRIES = 100
# Pedestrian spawns (and so their antipodal goals) keep this far from the
# robot's start/goal poles and the user's goal, so parked pedestrians cannot
# make the task endpoint physically unreachable.
_ENDPOINT_CLEARANCE = 1.5


@dataclass(frozen=True)
class CollisionReport:
    """Physical overlaps and social-distance violations for one world snapshot."""

    robot_pedestrian_hits: tuple[tuple[int, float], ...]  # (pedestrian id, penetration depth)
    min_separation: float  # min robot-pedestrian surface separation; +inf with no pedestrians
    discomfort_flags: tuple[bool, ...]  # aligned with w.pedestrians

    @property
    def any_hit(self) -> bool:
        return bool(self.robot_pedestrian_hits)

    @property
    def any_discomfort(self) -> bool:
        return any(self.discomfort_flags)


def _integrate(agent: AgentState, velocity: Vec2, dt: float) -> AgentState:
    pos = (agent.position[0] + velocity[0] * dt, agent.position[1] + velocity[1] * dt)
    return agent.moved(pos, velocity)


def step_world(
    w: WorldState,
    robot_action: LocalAction,
    params: OrcaParams,
    robot_visible: bool = True,
) -> WorldState:
    """Advance one step: humans follow ORCA, the robot follows robot_action.

    All human velocities are computed from the same pre-step snapshot, then
    everyone integrates over dt.  Pure function: same inputs, same output.
    """
    humans = list(w.humans())
    robot_obs = observable_projection(w.robot)
    new_humans: dict[int, AgentState] = {}
    for agent in humans:
        neighbors = [observable_projection(o) for o in humans if o.id != agent.id]
        if robot_visible:
            neighbors.append(robot_obs)
        v = orca_velocity(agent, neighbors, params, dt=w.dt)
        new_humans[agent.id] = _integrate(agent, v.as_tuple(), w.dt)

    new_robot = _integrate(w.robot, robot_action.as_tuple(), w.dt)
    new_user = new_humans[w.user.id] if w.user is not None else None
    new_peds = tuple(new_humans[p.id] for p in w.pedestrians)
    return WorldState(
        time_step=w.time_step + 1,
        dt=w.dt,
        robot=new_robot,
        user=new_user,
        pedestrians=new_peds,
        arena_radius=w.arena_radius,
    )


def detect_collisions(w: WorldState, social_distance_d: float) -> CollisionReport:
    """Hits are physical overlap; discomfort is surface separation below d without contact."""
    if social_distance_d < 0:
        raise ValueError("social distance must be >= 0")
    hits: list[tuple[int, float]] = []
    flags: list[bool] = []
    min_sep = math.inf
    for p in w.pedestrians:
        center = vec_dist(w.robot.position, p.position)
        combined = w.robot.radius + p.radius
        surface = center - combined
        min_sep = min(min_sep, surface)
        if center < combined:
            hits.append((p.id, combined - center))
            flags.append(False)
        else:
            flags.append(surface < social_distance_d)
    return CollisionReport(tuple(hits), min_sep, tuple(flags))


def min_pedestrian_surface_distance(w: WorldState) -> float:
    """Smallest robot-pedestrian surface separation; +inf with no pedestrians."""
    out = math.inf
    for p in w.pedestrians:
        out = min(out, vec_dist(w.robot.position, p.position) - w.robot.radius - p.radius)
    return out


def _far_enough(pos: Vec2, taken: list[tuple[Vec2, float]], radius: float) -> bool:
    for other_pos, other_radius in taken:
        if vec_dist(pos, other_pos) < radius + other_radius + _MIN_SPAWN_GAP:
            return False
    return True


def spawn_scenario(
    seed: int,
    n_pedestrians: int,
    task: str,
    arena_radius: float = DEFAULT_ARENA_RADIUS,
    dt: float = DEFAULT_DT,
    agent_radius: float = DEFAULT_AGENT_RADIUS,
    v_pref: float = DEFAULT_V_PREF,
) -> WorldState:
    """Seeded circle-crossing layout; identical seed gives a bit-identical world.

    Pedestrians sit on the arena circle with antipodal goals plus angular
    jitter; the robot starts at the circle bottom.  P2P places the goal at the
    circle top; HF adds a user on the circle walking to its own antipode.
    """
    if n_pedestrians < 0:
        raise ScenarioError("n_pedestrians must be >= 0")
    if task not in ("p2p", "hf"):
        raise ScenarioError(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    bottom = (0.0, -arena_radius)
    top = (0.0, arena_radius)
    taken: list[tuple[Vec2, float]] = [(bottom, agent_radius)]

    def heading_to(src: Vec2, dst: Vec2) -> float:
        return math.atan2(dst[1] - src[1], dst[0] - src[0])

    user: Optional[AgentState] = None
    if task == "hf":
        for _ in range(_SPAWN_RETRIES):
            angle = float(rng.uniform(0.0, 2.0 * math.pi))
            pos = (arena_radius * math.cos(angle), arena_radius * math.sin(angle))
            if _far_enough(pos, taken, agent_radius):
                goal = (-pos[0], -pos[1])
                user = AgentState(
                    id=1, kind=USER, position=pos, velocity=(0.0, 0.0), radius=agent_radius,
                    goal=goal, v_pref=v_pref, heading=heading_to(pos, goal),
                )
                taken.append((pos, agent_radius))
                break
        else:
            raise ScenarioError(f"user placement failed after {_SPAWN_RETRIES} retries (seed {seed})")

    clear_points: list[Vec2] = [bottom, top]
    if user is not None:
        clear_points.append(user.goal)

    pedestrians: list[AgentState] = []
    for i in range(n_pedestrians):
        base = 2.0 * math.pi * i / max(n_pedestrians, 1)
        for _ in range(_SPAWN_RETRIES):
            angle = base + float(rng.uniform(-0.4, 0.4))
            pos = (arena_radius * math.cos(angle), arena_radius * math.sin(angle))
            if any(vec_dist(pos, c) < _ENDPOINT_CLEARANCE for c in clear_points):
                continue
            if _far_enough(pos, taken, agent_radius):
                goal = (-pos[0], -pos[1])
                pedestrians.append(
                    AgentState(
                        id=2 + i, kind=PEDESTRIAN, position=pos, velocity=(0.0, 0.0),
                        radius=agent_radius, goal=goal, v_pref=v_pref, heading=heading_to(pos, goal),
                    )
                )
                taken.append((pos, agent_radius))
                break
        else:
            raise ScenarioError(f"pedestrian {i} placement failed after {_SPAWN_RETRIES} retries (seed {seed})")

    robot_goal = top if task == "p2p" else (user.position if user is not None else top)
    robot = AgentState(
        id=0, kind=ROBOT, position=bottom, velocity=(0.0, 0.0), radius=agent_radius,
        goal=robot_goal, v_pref=v_pref, heading=heading_to(bottom, robot_goal),
    )
    return WorldState(
        time_step=0, dt=dt, robot=robot, user=user,
        pedestrians=tuple(pedestrians), arena_radius=arena_radius,
    )


def trajectory_record(w: WorldState, events: list | None = None) -> dict:
    """One JSON-lines record of agent kinematics for trajectory dumps."""

    def agent_rec(a: AgentState) -> dict:
        return {
            "id": a.id,
            "kind": a.kind,
            "pos": [a.position[0], a.position[1]],
            "vel": [a.velocity[0], a.velocity[1]],
            "radius": a.radius,
            "goal": [a.goal[0], a.goal[1]],
            "v_pref": a.v_pref,
            "heading": a.heading,
        }

    return {
        "t": w.time_step,
        "robot": agent_rec(w.robot),
        "user": agent_rec(w.user) if w.user is not None else None,
        "pedestrians": [agent_rec(p) for p in w.pedestrians],
        "events": list(events or []),
    }


def world_from_record(rec: dict, dt: float, arena_radius: float) -> WorldState:
    """Rebuild a WorldState from a trajectory record (for replay tooling)."""

    def agent(doc: dict) -> AgentState:
        return AgentState(
            id=int(doc["id"]), kind=str(doc["kind"]),
            position=(float(doc["pos"][0]), float(doc["pos"][1])),
            velocity=(float(doc["vel"][0]), float(doc["vel"][1])),
            radius=float(doc["radius"]), goal=(float(doc["goal"][0]), float(doc["goal"][1])),
            v_pref=float(doc["v_pref"]), heading=float(doc.get("heading", 0.0)),
        )

    return WorldState(
        time_step=int(rec["t"]), dt=dt,
        robot=agent(rec["robot"]),
        user=agent(rec["user"]) if rec.get("user") else None,
        pedestrians=tuple(agent(p) for p in rec["pedestrians"]),
        arena_radius=arena_radius,
    )
