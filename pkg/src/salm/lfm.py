"""The language feedback model: a fixed 4-layer thought-graph evaluation of
the two candidate actions, and the execution decoder that fuses them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

from .core import LocalAction, WorldState, clip_action, vec_dist
from .episode import current_target
from .guidance import GlobalGuidance
from .got import (
    AGGREGATE,
    CHECKLIST,
    FINAL_SCORES,
    SCORE_INDIVIDUAL,
    VERIFY_LM,
    VERIFY_PAIR,
    VERIFY_RL,
    GotGraph,
    Thought,
    apply_aggregation,
    apply_generation,
    apply_refine,
    score_vertex,
)
from .llm import EVIDENCE_CLOSE, EVIDENCE_OPEN
from .lnm import LmAction, MemoryBuffer, PromptBundle

NEUTRAL_SCORE = 0.5


@dataclass(frozen=True)
class FusionWeights:
    s1: float  # weight of the RL action
    s2: float  # weight of the LM action

    def __post_init__(self) -> None:
        if not (0.0 <= self.s1 <= 1.0 and 0.0 <= self.s2 <= 1.0):
            raise ValueError(f"weights must lie in [0,1]: ({self.s1}, {self.s2})")
        if abs(self.s1 + self.s2 - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1: ({self.s1}, {self.s2})")

    @classmethod
    def normalized(cls, raw1: float, raw2: float) -> "FusionWeights":
        a = min(max(raw1, 0.0), 1.0)
        b = min(max(raw2, 0.0), 1.0)
        total = a + b
        if total <= 0.0:
            return cls(0.5, 0.5)
        return cls(a / total, 1.0 - a / total)

    def as_tuple(self) -> tuple[float, float]:
        return (self.s1, self.s2)


RL_ONLY = FusionWeights(1.0, 0.0)
BALANCED = FusionWeights(0.5, 0.5)


def fuse(a_rl: LocalAction, a_lm: LocalAction, w: FusionWeights, v_pref: float) -> LocalAction:
    """Execution decoder: convex combination of the two actions, then clip."""
    blended = LocalAction(
        w.s1 * a_rl.vx + w.s2 * a_lm.vx,
        w.s1 * a_rl.vy + w.s2 * a_lm.vy,
    )
    return clip_action(blended, v_pref)


def _lookahead(world: WorldState, action: LocalAction, g: GlobalGuidance) -> dict:
    """Checklist arithmetic: where everyone stands one step after this action."""
    dt = world.dt
    r = world.robot
    target = current_target(g, world)
    now = (r.position[0], r.position[1])
    nxt = (r.position[0] + action.vx * dt, r.position[1] + action.vy * dt)
    min_sep: Optional[float] = None
    for p in world.pedestrians:
        p_next = (p.position[0] + p.velocity[0] * dt, p.position[1] + p.velocity[1] * dt)
        sep = vec_dist(nxt, p_next) - r.radius - p.radius
        min_sep = sep if min_sep is None else min(min_sep, sep)
    return {
        "action": [action.vx, action.vy],
        "dist_to_target": round(vec_dist(now, target), 4),
        "next_dist_to_target": round(vec_dist(nxt, target), 4),
        "next_min_separation": None if min_sep is None else round(min_sep, 4),
        "social_distance": g.social_distance,
    }


def _checklist_content(name: str, payload: dict) -> str:
    return (
        f"Checklist for {name}: check distance to target now and after one step; "
        f"compute next-step robot-pedestrian separations.\n"
        f"{EVIDENCE_OPEN}{json.dumps(payload)}{EVIDENCE_CLOSE}"
    )


def _memory_tail(memory: MemoryBuffer, n: int = 3) -> str:
    tail = memory.records[-n:]
    if not tail:
        return "no executed actions yet"
    return "; ".join(f"({r.action[0]:.2f}, {r.action[1]:.2f})" for r in tail)


def build_pipeline_graph(
    a_rl: LocalAction,
    a_lm: LmAction,
    memory: MemoryBuffer,
    world: WorldState,
    guidance: GlobalGuidance,
) -> tuple[GotGraph, Thought, Thought, Thought]:
    """The fixed 4-layer topology: 3 verifications + 3 checklists, 2 scores,
    1 aggregate, 1 refined final vertex.  Returns (graph, s1_vertex, s2_vertex, final)."""
    graph = GotGraph()
    v_rl = graph.add_vertex(1, VERIFY_RL, f"Verify RL action ({a_rl.vx:.3f}, {a_rl.vy:.3f}).")
    v_lm = graph.add_vertex(
        1, VERIFY_LM,
        f"Verify LM action ({a_lm.action.vx:.3f}, {a_lm.action.vy:.3f})"
        + ("." if a_lm.parse_ok else " [parse failed, fallback stop]."),
    )
    v_pair = graph.add_vertex(
        1, VERIFY_PAIR,
        f"Compare the action pair; recent executed actions: {_memory_tail(memory)}.",
    )

    rl_payload = _lookahead(world, a_rl, guidance)
    lm_payload = _lookahead(world, a_lm.action, guidance)
    apply_generation(graph, v_rl, 1, lambda i: Thought(-1, 1, CHECKLIST, _checklist_content("RL action", rl_payload), rl_payload))
    apply_generation(graph, v_lm, 1, lambda i: Thought(-1, 1, CHECKLIST, _checklist_content("LM action", lm_payload), lm_payload))
    pair_payload = {"rl": rl_payload, "lm": lm_payload}
    apply_generation(
        graph, v_pair, 1,
        lambda i: Thought(
            -1, 1, CHECKLIST,
            "Checklist for the pair: compare progress and clearance of both candidates.",
            pair_payload,
        ),
    )
    checklists = [t for t in graph.vertices.values() if t.role == CHECKLIST]
    chk_rl, chk_lm, _ = checklists

    apply_aggregation(
        graph, [v_rl, chk_rl, v_pair],
        lambda src: Thought(-1, 2, SCORE_INDIVIDUAL, "Score the RL action against its checklist evidence."),
    )
    apply_aggregation(
        graph, [v_lm, chk_lm, v_pair],
        lambda src: Thought(-1, 2, SCORE_INDIVIDUAL, "Score the LM action against its checklist evidence."),
    )
    s1_v, s2_v = [t for t in graph.vertices.values() if t.role == SCORE_INDIVIDUAL]

    apply_aggregation(
        graph, [s1_v, s2_v, v_rl, v_lm],
        lambda src: Thought(-1, 3, AGGREGATE, "Combine individual scores with both verification threads."),
    )
    agg = next(t for t in graph.vertices.values() if t.role == AGGREGATE)
    apply_generation(
        graph, agg, 1,
        lambda i: Thought(-1, 4, FINAL_SCORES, "Relative score pair pending normalization."),
    )
    final = next(t for t in graph.vertices.values() if t.role == FINAL_SCORES)
    return graph, s1_v, s2_v, final


def _score_selector(sources: list[Thought]):
    def select(graph: GotGraph, vertex: Thought) -> list[Thought]:
        return sources

    return select


def evaluate(
    a_rl: LocalAction,
    a_lm: LmAction,
    memory: MemoryBuffer,
    prompt: PromptBundle,
    llm,
    world: WorldState,
    guidance: GlobalGuidance,
) -> tuple[FusionWeights, GotGraph]:
    """Score both candidate actions through the thought graph.

    The topology is identical on every invocation; backend behavior only
    changes vertex contents and scores.  An unparseable LM action short-
    circuits to pure-RL weights without touching the backend.
    """
    graph, s1_v, s2_v, final = build_pipeline_graph(a_rl, a_lm, memory, world, guidance)

    def finish(w: FusionWeights, note: str) -> tuple[FusionWeights, GotGraph]:
        apply_refine(
            graph, final,
            lambda t: Thought(
                t.id, 4, FINAL_SCORES,
                f"Final relative scores: ({w.s1:.4f}, {w.s2:.4f}). {note}".strip(),
                {"s1": w.s1, "s2": w.s2},
                score=w.s1,
            ),
        )
        return w, graph

    if not a_lm.parse_ok:
        return finish(RL_ONLY, "LM action unparseable; defaulting to the RL lower bound.")

    by_id = graph.vertices
    v_rl, v_lm, v_pair = by_id[0], by_id[1], by_id[2]
    chk = [t for t in graph.vertices.values() if t.role == CHECKLIST]
    raw1 = score_vertex(graph, s1_v, _score_selector([v_rl, chk[0], v_pair]), llm)
    raw2 = score_vertex(graph, s2_v, _score_selector([v_lm, chk[1], v_pair]), llm)

    failed1 = bool((s1_v.payload or {}).get("flag"))
    failed2 = bool((s2_v.payload or {}).get("flag"))
    if failed1 and failed2:
        return finish(RL_ONLY, "All scoring calls failed; defaulting to the RL lower bound.")
    return finish(FusionWeights.normalized(raw1, raw2), "")
