import math

import pytest

from salm.core import AgentState, LocalAction, ScenarioError, WorldState, vec_dist
from salm.orca import OrcaParams
from salm.sim import (
    detect_collisions,
    min_pedestrian_surface_distance,
    spawn_scenario,
    step_world,
    trajectory_record,
    world_from_record,
)

PARAMS = OrcaParams()
STOP = LocalAction(0.0, 0.0)


def world_with(robot_pos, ped_specs, dt=0.25):
    robot = AgentState(id=0, kind="robot", position=robot_pos, velocity=(0.0, 0.0),
                       radius=0.3, goal=(0.0, 6.0), v_pref=1.0)
    peds = tuple(
        AgentState(id=i + 2, kind="pedestrian", position=pos, velocity=(0.0, 0.0),
                   radius=r, goal=pos, v_pref=1.0)
        for i, (pos, r) in enumerate(ped_specs)
    )
    return WorldState(time_step=0, dt=dt, robot=robot, user=None, pedestrians=peds, arena_radius=6.0)


def test_euler_step_advances_robot():
    w = world_with((0.0, 0.0), [])
    w2 = step_world(w, LocalAction(1.0, 0.0), PARAMS)
    assert w2.robot.position == (0.25, 0.0)
    assert w2.time_step == 1


def test_all_agents_at_goals_is_fixed_point():
    w = world_with((0.0, 0.0), [((2.0, 2.0), 0.3), ((-2.0, 1.0), 0.3)])
    w = WorldState(time_step=0, dt=w.dt, robot=w.robot.moved(w.robot.goal, (0.0, 0.0)),
                   user=None, pedestrians=w.pedestrians, arena_radius=6.0)
    w2 = step_world(w, STOP, PARAMS)
    assert w2.time_step == w.time_step + 1
    assert w2.robot.position == w.robot.position
    for before, after in zip(w.pedestrians, w2.pedestrians):
        assert before.position == after.position


def test_seeded_circle_reaches_goals_by_step_200():
    w = spawn_scenario(7, 10, "p2p")
    for _ in range(200):
        w = step_world(w, STOP, PARAMS)
    assert all(p.dist_to_goal() <= 0.2 for p in w.pedestrians)


def test_step_world_is_deterministic():
    w1 = spawn_scenario(21, 6, "hf")
    w2 = spawn_scenario(21, 6, "hf")
    for _ in range(40):
        w1 = step_world(w1, LocalAction(0.3, 0.4), PARAMS)
        w2 = step_world(w2, LocalAction(0.3, 0.4), PARAMS)
    assert w1 == w2


def test_no_teleporting():
    w = spawn_scenario(5, 8, "p2p")
    for _ in range(80):
        w2 = step_world(w, LocalAction(0.9, 0.1), PARAMS)
        for a, b in zip(w.agents(), w2.agents()):
            assert vec_dist(a.position, b.position) <= a.v_pref * w.dt + 1e-9
        w = w2


def test_detect_collision_hit():
    w = world_with((0.0, 0.0), [((0.5, 0.0), 0.3)])
    report = detect_collisions(w, 0.4)
    assert report.any_hit
    ped_id, depth = report.robot_pedestrian_hits[0]
    assert ped_id == 2
    assert depth == pytest.approx(0.1)
    assert report.discomfort_flags == (False,)


def test_detect_discomfort_without_hit():
    w = world_with((0.0, 0.0), [((0.95, 0.0), 0.3)])  # surface separation 0.35
    report = detect_collisions(w, 0.4)
    assert not report.any_hit
    assert report.discomfort_flags == (True,)
    assert report.min_separation == pytest.approx(0.35)


def test_detect_no_flags_far_away():
    w = world_with((0.0, 0.0), [((2.6, 0.0), 0.3)])  # surface separation 2.0
    report = detect_collisions(w, 1.5)
    assert not report.any_hit and not report.any_discomfort


def test_min_separation_empty_crowd_is_inf():
    w = world_with((0.0, 0.0), [])
    assert min_pedestrian_surface_distance(w) == math.inf
    assert detect_collisions(w, 0.4).min_separation == math.inf


def test_spawn_determinism_and_ids():
    a = spawn_scenario(7, 10, "p2p")
    b = spawn_scenario(7, 10, "p2p")
    assert a == b
    ids = [x.id for x in a.agents()]
    assert len(ids) == len(set(ids))


def test_spawn_p2p_zero_pedestrians_only_robot():
    w = spawn_scenario(3, 0, "p2p")
    assert w.user is None and not w.pedestrians
    assert w.robot.dist_to_goal() == pytest.approx(2 * w.arena_radius)


def test_spawn_min_pairwise_separation():
    w = spawn_scenario(7, 10, "p2p")
    agents = list(w.agents())
    for i, a in enumerate(agents):
        for b in agents[i + 1:]:
            assert vec_dist(a.position, b.position) >= 2 * 0.3 + 0.1


def test_spawn_hf_has_user_with_antipodal_goal():
    w = spawn_scenario(9, 5, "hf")
    assert w.user is not None
    assert w.user.goal == (-w.user.position[0], -w.user.position[1])


def test_spawn_rejects_bad_inputs():
    with pytest.raises(ScenarioError):
        spawn_scenario(1, -1, "p2p")
    with pytest.raises(ScenarioError):
        spawn_scenario(1, 2, "warehouse")


def test_spawn_retry_exhaustion_raises():
    with pytest.raises(ScenarioError):
        spawn_scenario(1, 200, "p2p")  # cannot pack 200 on the circle


def test_trajectory_record_roundtrip():
    w = spawn_scenario(4, 3, "hf")
    rec = trajectory_record(w, events=[{"type": "x"}])
    assert rec["t"] == 0 and len(rec["pedestrians"]) == 3
    back = world_from_record(rec, dt=w.dt, arena_radius=w.arena_radius)
    assert back == w
