"""Optimal reciprocal collision avoidance.

Each neighbor induces a half-plane constraint on the agent's next velocity
(derived from the truncated velocity obstacle, split reciprocally); a small
2D linear program then picks the feasible velocity closest to the preferred
velocity toward the goal.  When the program is infeasible the 3D fallback
minimizes the worst constraint violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .core import (
    DEFAULT_DT,
    AgentState,
    LocalAction,
    ObservableState,
    Vec2,
    vec_det,
    vec_dot,
    vec_norm,
    vec_sub,
)

_EPS = 1e-10

# Deterministic tie-break: exactly co-linear closing encounters leave the
# optimum on the constraint boundary with no sideways component, so both
# agents would shave speed forever.  Rotating the perceived relative position
# by a fixed tiny angle picks a side; applying it in every agent's own frame
# keeps the two-agent encounter exactly point-symmetric.
_TIE_EPS = 1e-6
_TIE_COS = math.cos(_TIE_EPS)
_TIE_SIN = math.sin(_TIE_EPS)


@dataclass(frozen=True)
class OrcaParams:
    neighbor_dist: float = 10.0
    time_horizon: float = 5.0
    time_horizon_obst: float = 5.0  # retained for format stability; no static obstacles
    max_neighbors: int = 10

    def __post_init__(self) -> None:
        if min(self.neighbor_dist, self.time_horizon, self.time_horizon_obst) <= 0:
            raise ValueError("OrcaParams fields must be positive")
        if self.max_neighbors <= 0:
            raise ValueError("max_neighbors must be positive")


class Line(NamedTuple):
    point: Vec2
    direction: Vec2


def preferred_velocity(position: Vec2, goal: Vec2, v_pref: float, dt: float) -> Vec2:
    """Full speed toward the goal, slowing only to land on it within one step."""
    to_goal = vec_sub(goal, position)
    dist = vec_norm(to_goal)
    if dist <= 1e-9:
        return (0.0, 0.0)
    speed = min(v_pref, dist / dt)
    return (to_goal[0] / dist * speed, to_goal[1] / dist * speed)


def orca_lines(
    position: Vec2,
    velocity: Vec2,
    radius: float,
    neighbors: Sequence[ObservableState],
    time_horizon: float,
    dt: float,
) -> list[Line]:
    """One half-plane constraint per neighbor, reciprocal (half the correction each)."""
    lines: list[Line] = []
    inv_horizon = 1.0 / time_horizon
    for other in neighbors:
        rel_pos = vec_sub(other.position, position)
        rel_vel = vec_sub(velocity, other.velocity)
        if vec_det(rel_pos, rel_vel) == 0.0 and vec_dot(rel_pos, rel_vel) >= 0.0:
            rel_pos = (
                rel_pos[0] * _TIE_COS - rel_pos[1] * _TIE_SIN,
                rel_pos[0] * _TIE_SIN + rel_pos[1] * _TIE_COS,
            )
        dist_sq = vec_dot(rel_pos, rel_pos)
        combined = radius + other.radius
        combined_sq = combined * combined

        if dist_sq > combined_sq:
            # No current contact: constrain against the velocity obstacle
            # truncated at time_horizon.
            w = (rel_vel[0] - inv_horizon * rel_pos[0], rel_vel[1] - inv_horizon * rel_pos[1])
            w_len_sq = vec_dot(w, w)
            dot1 = vec_dot(w, rel_pos)
            if dot1 < 0.0 and dot1 * dot1 > combined_sq * w_len_sq:
                # Project on the cut-off circle.
                w_len = math.sqrt(w_len_sq)
                unit_w = (w[0] / w_len, w[1] / w_len)
                direction = (unit_w[1], -unit_w[0])
                u = ((combined * inv_horizon - w_len) * unit_w[0], (combined * inv_horizon - w_len) * unit_w[1])
            else:
                # Project on the nearer leg of the cone.
                leg = math.sqrt(dist_sq - combined_sq)
                if vec_det(rel_pos, w) > 0.0:
                    direction = (
                        (rel_pos[0] * leg - rel_pos[1] * combined) / dist_sq,
                        (rel_pos[0] * combined + rel_pos[1] * leg) / dist_sq,
                    )
                else:
                    direction = (
                        -(rel_pos[0] * leg + rel_pos[1] * combined) / dist_sq,
                        -(-rel_pos[0] * combined + rel_pos[1] * leg) / dist_sq,
                    )
                dot2 = vec_dot(rel_vel, direction)
                u = (dot2 * direction[0] - rel_vel[0], dot2 * direction[1] - rel_vel[1])
        else:
            # Already penetrating: push apart over one simulation step.
            inv_dt = 1.0 / dt
            w = (rel_vel[0] - inv_dt * rel_pos[0], rel_vel[1] - inv_dt * rel_pos[1])
            w_len = vec_norm(w)
            if w_len <= _EPS:
                unit_w = (1.0, 0.0)  # coincident centers: arbitrary fixed direction
            else:
                unit_w = (w[0] / w_len, w[1] / w_len)
            direction = (unit_w[1], -unit_w[0])
            u = ((combined * inv_dt - w_len) * unit_w[0], (combined * inv_dt - w_len) * unit_w[1])

        point = (velocity[0] + 0.5 * u[0], velocity[1] + 0.5 * u[1])
        lines.append(Line(point, direction))
    return lines


def violation(line: Line, v: Vec2) -> float:
    """Signed distance of v outside the feasible half-plane (<= 0 means satisfied)."""
    return vec_det(line.direction, vec_sub(line.point, v))


def _lp1(
    lines: Sequence[Line], line_no: int, radius: float, opt_v: Vec2, direction_opt: bool, result: Vec2
) -> tuple[bool, Vec2]:
    """Optimize along one constraint line, within the speed disc and prior constraints."""
    point, direction = lines[line_no]
    dot_product = vec_dot(point, direction)
    discriminant = dot_product * dot_product + radius * radius - vec_dot(point, point)
    if discriminant < 0.0:
        return False, result
    sqrt_disc = math.sqrt(discriminant)
    t_left = -dot_product - sqrt_disc
    t_right = -dot_product + sqrt_disc

    for i in range(line_no):
        denominator = vec_det(direction, lines[i].direction)
        numerator = vec_det(lines[i].direction, vec_sub(point, lines[i].point))
        if abs(denominator) <= _EPS:
            if numerator < 0.0:
                return False, result  # parallel and fully outside
            continue
        t = numerator / denominator
        if denominator >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return False, result

    if direction_opt:
        t = t_right if vec_dot(opt_v, direction) > 0.0 else t_left
    else:
        t = vec_dot(direction, vec_sub(opt_v, point))
        t = max(t_left, min(t_right, t))
    return True, (point[0] + t * direction[0], point[1] + t * direction[1])


def _lp2(lines: Sequence[Line], radius: float, opt_v: Vec2, direction_opt: bool) -> tuple[int, Vec2]:
    """Sequential 2D program; returns (first failing line index or len(lines), velocity)."""
    if direction_opt:
        result = (opt_v[0] * radius, opt_v[1] * radius)
    elif vec_dot(opt_v, opt_v) > radius * radius:
        n = vec_norm(opt_v)
        result = (opt_v[0] / n * radius, opt_v[1] / n * radius)
    else:
        result = opt_v

    for i, line in enumerate(lines):
        if violation(line, result) > 0.0:
            ok, new_result = _lp1(lines, i, radius, opt_v, direction_opt, result)
            if not ok:
                return i, result
            result = new_result
    return len(lines), result


def _lp3(lines: Sequence[Line], begin: int, radius: float, result: Vec2) -> Vec2:
    """Infeasible fallback: minimize the maximum violation from line `begin` on."""
    distance = 0.0
    for i in range(begin, len(lines)):
        if violation(lines[i], result) > distance:
            proj: list[Line] = []
            for j in range(i):
                determinant = vec_det(lines[i].direction, lines[j].direction)
                if abs(determinant) <= _EPS:
                    if vec_dot(lines[i].direction, lines[j].direction) > 0.0:
                        continue  # same direction: constraint i dominates
                    point = (
                        0.5 * (lines[i].point[0] + lines[j].point[0]),
                        0.5 * (lines[i].point[1] + lines[j].point[1]),
                    )
                else:
                    t = vec_det(lines[j].direction, vec_sub(lines[i].point, lines[j].point)) / determinant
                    point = (lines[i].point[0] + t * lines[i].direction[0], lines[i].point[1] + t * lines[i].direction[1])
                diff = vec_sub(lines[j].direction, lines[i].direction)
                n = vec_norm(diff)
                proj.append(Line(point, (diff[0] / n, diff[1] / n)))
            fail, new_result = _lp2(proj, radius, (-lines[i].direction[1], lines[i].direction[0]), True)
            if fail >= len(proj):
                result = new_result
            distance = violation(lines[i], result)
    return result


def solve_velocity(lines: Sequence[Line], max_speed: float, pref_velocity: Vec2) -> Vec2:
    fail, result = _lp2(lines, max_speed, pref_velocity, False)
    if fail < len(lines):
        result = _lp3(lines, fail, max_speed, result)
    return result


def orca_velocity(
    self_state: AgentState,
    neighbors: Sequence[ObservableState],
    params: OrcaParams,
    dt: float = DEFAULT_DT,
) -> LocalAction:
    """The feasible velocity closest to this agent's preferred velocity."""
    near = [n for n in neighbors if vec_norm(vec_sub(n.position, self_state.position)) < params.neighbor_dist]
    if len(near) > params.max_neighbors:
        near.sort(key=lambda n: vec_norm(vec_sub(n.position, self_state.position)))
        near = near[: params.max_neighbors]
    pref = preferred_velocity(self_state.position, self_state.goal, self_state.v_pref, dt)
    lines = orca_lines(self_state.position, self_state.velocity, self_state.radius, near, params.time_horizon, dt)
    v = solve_velocity(lines, self_state.v_pref, pref)
    return LocalAction(v[0] + 0.0, v[1] + 0.0)
