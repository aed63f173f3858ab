import json

import pytest
from hypothesis import given, strategies as st

from salm.core import LocalAction
from salm.guidance import GlobalGuidance
from salm.lfm import BALANCED, FusionWeights, RL_ONLY, build_pipeline_graph, evaluate, fuse
from salm.llm import LlmBackend
from salm.lnm import LmAction, new_memory
from salm.sim import spawn_scenario

MOCK = LlmBackend(kind="mock")


def guidance(**kw):
    base = dict(task="p2p", target=(0.0, 6.0), social_distance=0.4,
                norm="robot_first", stop_distance=1.0)
    base.update(kw)
    return GlobalGuidance(**base)


def setup(n_peds=3, seed=7):
    w = spawn_scenario(seed, n_peds, "p2p")
    g = guidance()
    from salm.lnm import assemble_prompt, load_templates

    memory = new_memory(w, g)
    bundle = assemble_prompt(g, memory, w, load_templates())
    return w, g, memory, bundle


def test_weights_validation():
    with pytest.raises(ValueError):
        FusionWeights(0.7, 0.7)
    with pytest.raises(ValueError):
        FusionWeights(-0.1, 1.1)
    assert FusionWeights(1.0, 0.0) == RL_ONLY


def test_normalized_clamps_and_sums_to_one():
    w = FusionWeights.normalized(0.8, 0.2)
    assert w.s1 == pytest.approx(0.8, abs=1e-9)
    assert w.s1 + w.s2 == pytest.approx(1.0, abs=1e-12)
    assert FusionWeights.normalized(0.0, 0.0) == BALANCED
    w2 = FusionWeights.normalized(2.5, 0.5)  # clamped to (1.0, 0.5)
    assert w2.s1 == pytest.approx(2.0 / 3.0)


def test_fuse_weights_identity():
    a_rl, a_lm = LocalAction(0.4, -0.2), LocalAction(-0.9, 0.1)
    assert fuse(a_rl, a_lm, RL_ONLY, 1.0) == LocalAction(0.4, -0.2)
    assert fuse(a_rl, a_lm, FusionWeights(0.0, 1.0), 1.0) == LocalAction(-0.9, 0.1)


def test_fuse_balanced_crossing_actions():
    out = fuse(LocalAction(1.0, 0.0), LocalAction(0.0, 1.0), BALANCED, 1.0)
    assert out == LocalAction(0.5, 0.5)


def test_fuse_clips_to_v_pref():
    out = fuse(LocalAction(1.0, 0.0), LocalAction(1.0, 0.0), BALANCED, 1.0)
    assert out == LocalAction(1.0, 0.0)
    out2 = fuse(LocalAction(2.0, 0.0), LocalAction(2.0, 0.0), BALANCED, 1.0)
    assert out2.speed <= 1.0 + 1e-9


def test_fuse_same_action_any_weights():
    a = LocalAction(0.3, 0.4)
    for w in (RL_ONLY, BALANCED, FusionWeights(0.25, 0.75)):
        assert fuse(a, a, w, 1.0) == a


@given(
    st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2),
    st.floats(0, 1), st.floats(0.2, 3),
)
def test_fuse_properties_hold_for_arbitrary_inputs(ax, ay, bx, by, s1, v_pref):
    w = FusionWeights(s1, 1.0 - s1)
    out = fuse(LocalAction(ax, ay), LocalAction(bx, by), w, v_pref)
    assert out.speed <= v_pref * (1 + 1e-9)
    blended = (w.s1 * ax + w.s2 * bx, w.s1 * ay + w.s2 * by)
    speed = (blended[0] ** 2 + blended[1] ** 2) ** 0.5
    if speed <= v_pref:  # inside the ball the decoder is exactly the convex sum
        assert out.vx == pytest.approx(blended[0], abs=1e-12)
        assert out.vy == pytest.approx(blended[1], abs=1e-12)


def expected_topology(graph):
    roles = [t.role for t in graph.vertices.values()]
    return (
        len(graph.vertices) == 10
        and roles.count("verify_rl") == 1
        and roles.count("verify_lm") == 1
        and roles.count("verify_pair") == 1
        and roles.count("checklist") == 3
        and roles.count("score_individual") == 2
        and roles.count("aggregate") == 1
        and roles.count("final_scores") == 1
    )


def test_pipeline_topology_exact():
    w, g, memory, bundle = setup()
    weights, graph = evaluate(LocalAction(0.0, 1.0), LmAction(LocalAction(0.0, 1.0)),
                              memory, bundle, MOCK, world=w, guidance=g)
    assert expected_topology(graph)
    final = next(t for t in graph.vertices.values() if t.role == "final_scores")
    assert graph.self_loops(final) >= 1
    assert graph.is_acyclic_ignoring_self_loops()
    assert weights.s1 + weights.s2 == pytest.approx(1.0, abs=1e-9)


def test_parse_failure_short_circuits_without_backend_calls():
    w, g, memory, bundle = setup()

    class Exploding:
        def complete_ex(self, prompt, params=None, caller=""):
            raise AssertionError("backend must not be called")

    weights, graph = evaluate(LocalAction(0.5, 0.0), LmAction(LocalAction(0.0, 0.0), parse_ok=False),
                              memory, bundle, Exploding(), world=w, guidance=g)
    assert weights == RL_ONLY
    assert expected_topology(graph)


class _Canned:
    def __init__(self, replies):
        self.replies = list(replies)

    def complete_ex(self, prompt, params=None, caller=""):
        from salm.llm import CompletionResult

        return CompletionResult(self.replies.pop(0), 0, 0.0)


def test_canned_scores_become_weights():
    w, g, memory, bundle = setup()
    weights, _ = evaluate(LocalAction(0.0, 1.0), LmAction(LocalAction(0.0, 1.0)),
                          memory, bundle, _Canned(["0.8", "0.2"]), world=w, guidance=g)
    assert weights.s1 == pytest.approx(0.8, abs=1e-9)
    assert weights.s2 == pytest.approx(0.2, abs=1e-9)


def test_all_neutral_scores_balance():
    w, g, memory, bundle = setup()
    weights, _ = evaluate(LocalAction(0.0, 1.0), LmAction(LocalAction(0.0, 1.0)),
                          memory, bundle, _Canned(["0.5", "0.5"]), world=w, guidance=g)
    assert weights == BALANCED


def test_total_scoring_failure_favors_rl():
    class Failing:
        def complete_ex(self, prompt, params=None, caller=""):
            from salm.llm import BackendError

            raise BackendError("down")

    w, g, memory, bundle = setup()
    weights, graph = evaluate(LocalAction(0.0, 1.0), LmAction(LocalAction(0.0, 1.0)),
                              memory, bundle, Failing(), world=w, guidance=g)
    assert weights == RL_ONLY
    assert expected_topology(graph)


def test_partial_failure_uses_neutral_for_failed_side():
    replies = ["0.9"]

    class HalfFailing:
        def complete_ex(self, prompt, params=None, caller=""):
            from salm.llm import BackendError, CompletionResult

            if replies:
                return CompletionResult(replies.pop(0), 0, 0.0)
            raise BackendError("down")

    w, g, memory, bundle = setup()
    weights, _ = evaluate(LocalAction(0.0, 1.0), LmAction(LocalAction(0.0, 1.0)),
                          memory, bundle, HalfFailing(), world=w, guidance=g)
    assert weights.s1 == pytest.approx(0.9 / 1.4)
    assert weights.s2 == pytest.approx(0.5 / 1.4)


def test_mock_scores_safe_rl_over_colliding_lm():
    # A pedestrian dead ahead: the straight LM action predicts contact, a
    # sideways RL action stays clear; the lookahead rule must split them.
    from salm.core import AgentState, WorldState

    robot = AgentState(id=0, kind="robot", position=(0.0, 0.0), velocity=(0.0, 1.0),
                       radius=0.3, goal=(0.0, 6.0), v_pref=1.0)
    ped = AgentState(id=2, kind="pedestrian", position=(0.0, 0.8), velocity=(0.0, 0.0),
                     radius=0.3, goal=(0.0, 0.8), v_pref=1.0)
    w = WorldState(time_step=0, dt=0.25, robot=robot, user=None, pedestrians=(ped,), arena_radius=6.0)
    g = guidance()
    from salm.lnm import assemble_prompt, load_templates

    memory = new_memory(w, g)
    bundle = assemble_prompt(g, memory, w, load_templates())
    a_rl = LocalAction(1.0, 0.0)   # sidesteps
    a_lm = LmAction(LocalAction(0.0, 1.0))  # drives into the pedestrian (0.55 gap, 0.25 step, margin < 0? no: sep ~0.2 -> 0.4 score)
    weights, graph = evaluate(a_rl, a_lm, memory, bundle, MOCK, world=w, guidance=g)
    assert weights.s1 > weights.s2


def test_graph_attached_payloads_carry_lookahead():
    w, g, memory, bundle = setup()
    _, graph = evaluate(LocalAction(0.0, 1.0), LmAction(LocalAction(0.0, 1.0)),
                        memory, bundle, MOCK, world=w, guidance=g)
    checklists = [t for t in graph.vertices.values() if t.role == "checklist"]
    assert len(checklists) == 3
    for t in checklists[:2]:
        assert "next_min_separation" in t.payload
        assert "<<EVIDENCE>>" in t.content
    doc = graph.to_json()
    assert len(doc["vertices"]) == 10
    json.dumps(doc)  # serializable
