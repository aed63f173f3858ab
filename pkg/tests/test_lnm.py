import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from salm.core import LocalAction
from salm.guidance import GlobalGuidance
from salm.llm import LlmBackend
from salm.lnm import (
    DEMONSTRATION,
    HISTORICAL,
    LmAction,
    MemoryBuffer,
    MemoryRecord,
    PromptBundle,
    TemplateError,
    assemble_prompt,
    encode_state_to_text,
    load_templates,
    new_memory,
    query_action,
    update_memory,
)
from salm.sim import spawn_scenario

GOLDEN = Path(__file__).parent / "golden"
MOCK = LlmBackend(kind="mock")


def guidance(**kw):
    base = dict(task="p2p", target=(0.0, 6.0), social_distance=0.4,
                norm="robot_first", stop_distance=1.0)
    base.update(kw)
    return GlobalGuidance(**base)


def test_encode_empty_crowd_has_robot_and_target_lines_only():
    w = spawn_scenario(1, 0, "p2p")
    text = encode_state_to_text(w, guidance())
    lines = text.splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("Robot:")
    assert lines[1].startswith("Target:")


def test_encode_deterministic():
    w = spawn_scenario(7, 10, "p2p")
    assert encode_state_to_text(w, guidance()) == encode_state_to_text(w, guidance())


def test_encode_matches_golden():
    w = spawn_scenario(7, 10, "p2p")
    expected = (GOLDEN / "state_text_seed7.txt").read_text()
    assert encode_state_to_text(w, guidance()) + "\n" == expected


def test_memory_starts_in_demonstration_phase():
    w = spawn_scenario(1, 0, "p2p")
    m = new_memory(w, guidance())
    assert m.phase == DEMONSTRATION
    assert len(m.records) == 4


def test_memory_fifo_eviction():
    m = MemoryBuffer(records=(), capacity=8)
    for i in range(9):
        m = update_memory(m, MemoryRecord(state_text=f"s{i}", action=(0.0, 0.0),
                                          weights=(0.5, 0.5), reward=0.0))
    assert len(m.records) == 8
    assert m.records[0].state_text == "s1"  # oldest evicted


@given(st.integers(1, 12), st.integers(0, 40))
def test_memory_bounded_and_strictly_fifo(capacity, n_appends):
    m = MemoryBuffer(records=(), capacity=capacity)
    for i in range(n_appends):
        m = update_memory(m, MemoryRecord(state_text=f"s{i}", action=(0.0, 0.0),
                                          weights=(0.5, 0.5), reward=0.0))
        assert len(m.records) <= capacity
    kept = [r.state_text for r in m.records]
    expected = [f"s{i}" for i in range(max(0, n_appends - capacity), n_appends)]
    assert kept == expected


def test_memory_phase_flips_once_demos_displaced():
    w = spawn_scenario(1, 0, "p2p")
    m = new_memory(w, guidance())  # 4 demos, capacity 8
    for i in range(8):
        m = update_memory(m, MemoryRecord(state_text=f"s{i}", action=(0.0, 1.0),
                                          weights=(0.5, 0.5), reward=0.1))
        expected = DEMONSTRATION if i < 3 else HISTORICAL
    assert m.phase == HISTORICAL
    assert all(not r.is_demo for r in m.records)


def test_prompt_sections_must_be_non_empty():
    with pytest.raises(ValueError):
        PromptBundle(t_task="x", t_guidance="", t_data="x", t_history="x",
                     t_additional="x", state_text="x")


def test_assemble_prompt_deterministic_and_ordered():
    w = spawn_scenario(7, 3, "p2p")
    templates = load_templates()
    m = new_memory(w, guidance())
    a = assemble_prompt(guidance(), m, w, templates)
    b = assemble_prompt(guidance(), m, w, templates)
    assert a == b
    text = a.concat()
    order = ["=== TASK ===", "=== GLOBAL GUIDANCE ===", "=== DATA ANNOTATION ===",
             "=== HISTORY ===", "=== ADDITIONAL ===", "=== CURRENT STATE ==="]
    positions = [text.index(part) for part in order]
    assert positions == sorted(positions)


def test_fresh_prompt_contains_demonstrations_then_history_later():
    w = spawn_scenario(7, 0, "p2p")
    templates = load_templates()
    m = new_memory(w, guidance())
    fresh = assemble_prompt(guidance(), m, w, templates)
    assert "Demonstration trajectory" in fresh.t_history
    for i in range(8):
        m = update_memory(m, MemoryRecord(state_text=f"s{i}", action=(0.0, 1.0),
                                          weights=(0.5, 0.5), reward=0.1))
    later = assemble_prompt(guidance(), m, w, templates)
    assert "Recent executed steps" in later.t_history
    assert "demo" not in later.t_history


def test_missing_template_raises_at_startup(tmp_path):
    with pytest.raises(TemplateError):
        load_templates(tmp_path)


def test_query_action_mock_clear_path():
    w = spawn_scenario(1, 0, "p2p")
    g = guidance(target=(6.0, -6.0))  # due +x of the spawn at (0, -6)
    bundle = assemble_prompt(g, new_memory(w, g), w, load_templates())
    lm = query_action(bundle, MOCK, v_pref=1.0)
    assert lm.parse_ok
    assert lm.action.vx == pytest.approx(1.0, abs=0.01)
    assert lm.action.vy == pytest.approx(0.0, abs=0.01)


class _CannedBackend:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete_ex(self, prompt, params=None, caller=""):
        from salm.llm import CompletionResult

        self.calls += 1
        return CompletionResult(self.replies.pop(0), 0, 0.0)


def _bundle():
    w = spawn_scenario(1, 0, "p2p")
    return assemble_prompt(guidance(), new_memory(w, guidance()), w, load_templates())


def test_query_action_prose_reply_falls_back():
    backend = _CannedBackend(["I think you should go north", "still prose"])
    lm = query_action(_bundle(), backend, v_pref=1.0)
    assert not lm.parse_ok
    assert lm.action == LocalAction(0.0, 0.0)
    assert backend.calls == 2  # one retry


def test_query_action_clips_oversized_reply():
    backend = _CannedBackend([json.dumps({"vx": 3.0, "vy": 4.0})])
    lm = query_action(_bundle(), backend, v_pref=1.0)
    assert lm.parse_ok
    assert lm.action.vx == pytest.approx(0.6)
    assert lm.action.vy == pytest.approx(0.8)


def test_query_action_non_finite_rejected():
    backend = _CannedBackend([json.dumps({"vx": 1e400, "vy": 0}), "{\"vx\": null, \"vy\": 2}"])
    lm = query_action(_bundle(), backend, v_pref=1.0)
    assert not lm.parse_ok


def test_query_action_backend_error_contained():
    class FailingBackend:
        def complete_ex(self, prompt, params=None, caller=""):
            from salm.llm import BackendTimeout

            raise BackendTimeout("no answer")

    lm = query_action(_bundle(), FailingBackend(), v_pref=1.0)
    assert not lm.parse_ok
    assert lm.action == LocalAction(0.0, 0.0)
