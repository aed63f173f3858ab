"""Generic graph-of-thoughts engine: typed vertices, the three structural
operations (generation, aggregation, refining), and LLM-backed scoring."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .llm import BackendError, MARK_SCORE, complete_ex

# Pipeline roles, in topology order.
VERIFY_RL = "verify_rl"
VERIFY_LM = "verify_lm"
VERIFY_PAIR = "verify_pair"
CHECKLIST = "checklist"
SCORE_INDIVIDUAL = "score_individual"
AGGREGATE = "aggregate"
FINAL_SCORES = "final_scores"

ROLES = (VERIFY_RL, VERIFY_LM, VERIFY_PAIR, CHECKLIST, SCORE_INDIVIDUAL, AGGREGATE, FINAL_SCORES)


class GraphError(ValueError):
    """An operation referenced a vertex that is not in the graph."""


@dataclass
class Thought:
    id: int
    layer: int
    role: str
    content: str
    payload: Optional[dict] = None
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.layer < 1:
            raise ValueError("layer must be >= 1")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass
class GotGraph:
    vertices: dict[int, Thought] = field(default_factory=dict)
    edges: list[tuple[int, int]] = field(default_factory=list)  # multiset; self-loops from refining
    _next_id: int = 0

    def add_vertex(self, layer: int, role: str, content: str, payload: Optional[dict] = None) -> Thought:
        t = Thought(id=self._next_id, layer=layer, role=role, content=content, payload=payload)
        self.vertices[t.id] = t
        self._next_id += 1
        return t

    def require(self, v: Thought) -> Thought:
        if v.id not in self.vertices:
            raise GraphError(f"vertex {v.id} not in graph")
        return self.vertices[v.id]

    def out_degree(self, v: Thought) -> int:
        return sum(1 for a, _ in self.edges if a == v.id)

    def in_degree(self, v: Thought) -> int:
        return sum(1 for _, b in self.edges if b == v.id)

    def self_loops(self, v: Thought) -> int:
        return sum(1 for a, b in self.edges if a == b == v.id)

    def is_acyclic_ignoring_self_loops(self) -> bool:
        adj: dict[int, list[int]] = {vid: [] for vid in self.vertices}
        indeg = {vid: 0 for vid in self.vertices}
        for a, b in self.edges:
            if a == b:
                continue
            adj[a].append(b)
            indeg[b] += 1
        queue = [vid for vid, n in indeg.items() if n == 0]
        seen = 0
        while queue:
            vid = queue.pop()
            seen += 1
            for nxt in adj[vid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    queue.append(nxt)
        return seen == len(self.vertices)

    def to_json(self) -> dict:
        return {
            "vertices": [
                {
                    "id": t.id, "layer": t.layer, "role": t.role,
                    "content": t.content, "payload": t.payload, "score": t.score,
                }
                for t in self.vertices.values()
            ],
            "edges": [[a, b] for a, b in self.edges],
        }

    def to_dot(self) -> str:
        lines = ["digraph got {"]
        for t in self.vertices.values():
            score = "" if t.score is None else f"\\nscore={t.score:.2f}"
            lines.append(f'  v{t.id} [label="L{t.layer} {t.role}{score}"];')
        for a, b in self.edges:
            lines.append(f"  v{a} -> v{b};")
        lines.append("}")
        return "\n".join(lines)


Producer = Callable[[int], Thought]


def apply_generation(g: GotGraph, v: Thought, k: int, producer: Producer) -> GotGraph:
    """Sprout k new child vertices from v; new vertices are sinks, so no cycles."""
    parent = g.require(v)
    for i in range(k):
        proto = producer(i)
        child = g.add_vertex(layer=proto.layer, role=proto.role, content=proto.content, payload=proto.payload)
        g.edges.append((parent.id, child.id))
    return g


def apply_aggregation(g: GotGraph, sources: Sequence[Thought], combiner: Callable[[Sequence[Thought]], Thought]) -> GotGraph:
    """One new vertex with an in-edge from every source."""
    if not sources:
        raise GraphError("aggregation needs at least one source")
    resolved = [g.require(s) for s in sources]
    proto = combiner(resolved)
    merged = g.add_vertex(layer=proto.layer, role=proto.role, content=proto.content, payload=proto.payload)
    for s in resolved:
        g.edges.append((s.id, merged.id))
    return g


def apply_refine(g: GotGraph, v: Thought, refiner: Callable[[Thought], Thought]) -> GotGraph:
    """Rewrite v in place and record the self-loop; vertex count unchanged."""
    vertex = g.require(v)
    proto = refiner(vertex)
    vertex.content = proto.content
    vertex.payload = proto.payload
    if proto.score is not None:
        vertex.score = proto.score
    g.edges.append((vertex.id, vertex.id))
    return g


_SCORE_RE = re.compile(r"-?\d+(?:\.\d+)?")


def parse_score(reply: str) -> Optional[float]:
    """First decimal in [0, 1] anywhere in the reply."""
    for m in _SCORE_RE.finditer(reply):
        value = float(m.group(0))
        if 0.0 <= value <= 1.0:
            return value
    return None


def score_vertex(g: GotGraph, v: Thought, subgraph_selector, llm) -> float:
    """Score one vertex against the evidence in its selected subgraph.

    Unparseable output after one retry records a neutral 0.5 with a flag.
    """
    vertex = g.require(v)
    selected = subgraph_selector(g, vertex)
    prompt = "\n".join(
        [
            "Rate how good the candidate below is, from 0.0 (certain failure)",
            "to 1.0 (clearly safe and effective). Answer with one number.",
            f"## {MARK_SCORE}",
            "Candidate:",
            vertex.content,
            "Evidence:",
        ]
        + [t.content for t in selected]
    )
    for _ in range(2):
        try:
            reply = complete_ex(llm, prompt, caller="lfm").text
        except BackendError as exc:
            vertex.score = 0.5
            vertex.payload = dict(vertex.payload or {}, flag=f"backend_error: {exc}")
            return 0.5
        value = parse_score(reply)
        if value is not None:
            vertex.score = value
            return value
    vertex.score = 0.5
    vertex.payload = dict(vertex.payload or {}, flag="unparseable_score")
    return 0.5
