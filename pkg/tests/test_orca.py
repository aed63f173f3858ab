import math

import numpy as np
import pytest

from salm.core import AgentState, LocalAction, observable_projection
from salm.orca import OrcaParams, orca_lines, orca_velocity, solve_velocity, violation


def ped(i, pos, goal, vel=(0.0, 0.0), radius=0.3, v_pref=1.0):
    return AgentState(id=i, kind="pedestrian", position=pos, velocity=vel,
                      radius=radius, goal=goal, v_pref=v_pref)


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        OrcaParams(neighbor_dist=0.0)
    with pytest.raises(ValueError):
        OrcaParams(max_neighbors=0)


def test_no_neighbors_returns_preferred_velocity_exactly():
    a = ped(0, (0.0, 0.0), (10.0, 0.0))
    assert orca_velocity(a, [], OrcaParams()) == LocalAction(1.0, 0.0)


def test_at_goal_returns_zero():
    a = ped(0, (2.0, 2.0), (2.0, 2.0))
    assert orca_velocity(a, [], OrcaParams()) == LocalAction(0.0, 0.0)


def test_neighbor_behind_keeps_preferred_velocity():
    # Neighbor trailing directly behind a goal-bound agent: its half-plane
    # must not cut the preferred velocity.
    me = ped(0, (0.0, 0.0), (10.0, 0.0), vel=(1.0, 0.0))
    behind = ped(1, (-2.0, 0.0), (-10.0, 0.0), vel=(1.0, 0.0))
    neighbors = [observable_projection(behind)]
    out = orca_velocity(me, neighbors, OrcaParams())
    assert (out.vx, out.vy) == (1.0, 0.0)
    lines = orca_lines(me.position, me.velocity, me.radius, neighbors, 5.0, 0.25)
    assert all(violation(line, (1.0, 0.0)) <= 1e-9 for line in lines)


def simulate_head_on(steps=200, dt=0.25):
    a = ped(0, (-5.0, 0.0), (5.0, 0.0))
    b = ped(1, (5.0, 0.0), (-5.0, 0.0))
    params = OrcaParams()
    trace = []
    for _ in range(steps):
        va = orca_velocity(a, [observable_projection(b)], params, dt)
        vb = orca_velocity(b, [observable_projection(a)], params, dt)
        a = a.moved((a.position[0] + va.vx * dt, a.position[1] + va.vy * dt), va.as_tuple())
        b = b.moved((b.position[0] + vb.vx * dt, b.position[1] + vb.vy * dt), vb.as_tuple())
        trace.append((a, b))
    return trace


def test_symmetric_head_on_is_mirror_symmetric_and_collision_free():
    trace = simulate_head_on()
    min_sep = min(math.dist(a.position, b.position) for a, b in trace)
    assert min_sep >= 0.6  # sum of radii
    for a, b in trace:
        # Trajectories stay exact mirror images through the encounter midpoint.
        assert math.hypot(a.position[0] + b.position[0], a.position[1] + b.position[1]) <= 1e-6
    a_final, b_final = trace[-1]
    assert a_final.dist_to_goal() < 0.2
    assert b_final.dist_to_goal() < 0.2


def test_sidedness_is_deterministic():
    first = simulate_head_on(steps=60)
    second = simulate_head_on(steps=60)
    for (a1, b1), (a2, b2) in zip(first, second):
        assert a1.position == a2.position
        assert b1.position == b2.position


def test_feasible_solutions_satisfy_all_constraints():
    rng = np.random.default_rng(11)
    params = OrcaParams()
    checked = 0
    for _ in range(300):
        me = ped(0, tuple(rng.uniform(-3, 3, 2)), tuple(rng.uniform(-5, 5, 2)))
        neighbors = []
        for j in range(int(rng.integers(1, 6))):
            pos = tuple(rng.uniform(-3, 3, 2))
            if math.dist(pos, me.position) < 0.65:
                continue  # keep the non-penetrating regime for this property
            vel = tuple(rng.uniform(-1, 1, 2) * 0.7)
            neighbors.append(observable_projection(ped(j + 1, pos, (0.0, 0.0), vel=vel)))
        lines = orca_lines(me.position, me.velocity, me.radius, neighbors, params.time_horizon, 0.25)
        v = orca_velocity(me, neighbors, params)
        if all(violation(line, (0.0, 0.0)) <= 0 for line in lines):
            pass  # feasibility of the full LP is what matters below
        worst = max((violation(line, v.as_tuple()) for line in lines), default=0.0)
        feasible_probe = solve_velocity(lines, me.v_pref, (0.0, 0.0))
        probe_worst = max((violation(line, feasible_probe) for line in lines), default=0.0)
        if probe_worst <= 1e-12:  # the LP had a feasible point
            assert worst <= 1e-9
            checked += 1
        assert v.speed <= me.v_pref + 1e-9
    assert checked > 50


def test_overlapping_agents_push_apart():
    me = ped(0, (0.0, 0.0), (5.0, 0.0))
    other = ped(1, (0.3, 0.0), (-5.0, 0.0))  # centers 0.3 apart, radii sum 0.6
    v = orca_velocity(me, [observable_projection(other)], OrcaParams(), dt=0.25)
    # One step must not leave them deeper in contact.
    me2 = (me.position[0] + v.vx * 0.25, me.position[1] + v.vy * 0.25)
    assert math.dist(me2, other.position) >= math.dist(me.position, other.position) - 1e-9


def test_max_neighbors_limits_constraints():
    me = ped(0, (0.0, 0.0), (10.0, 0.0))
    crowd = [observable_projection(ped(i + 1, (1.0 + 0.5 * i, 0.2 * (i - 6)), (0.0, 0.0)))
             for i in range(12)]
    params = OrcaParams(max_neighbors=3)
    out = orca_velocity(me, crowd, params)
    assert out.speed <= 1.0 + 1e-9
