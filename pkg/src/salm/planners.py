"""Planner configurations: the full hybrid stack and its ablations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .core import LocalAction, STOP_ACTION, WorldState, observable_projection
from .episode import PlannerDecision, current_target
from .guidance import GlobalGuidance
from .lfm import BALANCED, FusionWeights, RL_ONLY, evaluate, fuse
from .llm import LlmBackend
from .lnm import (
    LmAction,
    MemoryBuffer,
    MemoryRecord,
    assemble_prompt,
    load_templates,
    new_memory,
    query_action,
    summarize_state,
    update_memory,
)
from .orca import OrcaParams, orca_velocity
from .rlnm.nn import PolicyWeights
from .rlnm.policy import RlSlot

PLANNER_NAMES = ("ORCA_baseline", "SA-RLNM", "SA-LNM", "SA-LFM-fixed", "SALM")


def _macro_events(macro) -> list[dict]:
    """Macro actions are logged but never drive motion."""
    if macro is None:
        return []
    return [{"type": "macro_action", "kind": macro.kind,
             "waypoint": None if macro.waypoint is None else list(macro.waypoint),
             "label": macro.label}]


@dataclass
class PlannerConfig:
    name: str = "SALM"
    backend: LlmBackend = field(default_factory=LlmBackend)
    rl_weights: Optional[PolicyWeights] = None  # None = ORCA-backed fallback slot
    fixed_weights: tuple[float, float] = (0.5, 0.5)
    lfm_every_k_steps: int = 1
    orca: OrcaParams = field(default_factory=OrcaParams)
    force_weights: Optional[tuple[float, float]] = None  # diagnostic override of LFM output

    def __post_init__(self) -> None:
        if self.name not in PLANNER_NAMES:
            raise ValueError(f"unknown planner {self.name!r}; expected one of {PLANNER_NAMES}")
        if self.name == "SA-LFM-fixed" and tuple(self.fixed_weights) != (0.5, 0.5):
            raise ValueError("SA-LFM-fixed carries fixed weights (0.5, 0.5)")
        if self.lfm_every_k_steps < 1:
            raise ValueError("lfm_every_k_steps must be >= 1")


class OrcaBaselinePlanner:
    """Vanilla ORCA toward the current target; language only sets the target."""

    name = "ORCA_baseline"

    def __init__(self, cfg: PlannerConfig):
        self.params = cfg.orca

    def reset(self, scenario: WorldState, guidance: GlobalGuidance) -> None:
        pass

    def decide(self, world: WorldState, guidance: GlobalGuidance) -> PlannerDecision:
        me = replace(world.robot, goal=current_target(guidance, world))
        neighbors = [observable_projection(a) for a in world.humans()]
        action = orca_velocity(me, neighbors, self.params, dt=world.dt)
        return PlannerDecision(action=action)

    def observe(self, world, guidance, action, weights, reward) -> None:
        pass


class RlnmPlanner:
    """SA-RLNM ablation: the RL slot alone (LNM and LFM detached)."""

    name = "SA-RLNM"

    def __init__(self, cfg: PlannerConfig):
        self.slot = RlSlot(weights=cfg.rl_weights, params=cfg.orca)

    def reset(self, scenario: WorldState, guidance: GlobalGuidance) -> None:
        self.slot.reset(scenario)

    def decide(self, world: WorldState, guidance: GlobalGuidance) -> PlannerDecision:
        macro, action = self.slot.act(world, guidance)
        return PlannerDecision(action=action, a_rl=action, events=_macro_events(macro))

    def observe(self, world, guidance, action, weights, reward) -> None:
        pass


class LnmPlanner:
    """SA-LNM ablation: language actions alone (RL slot and LFM detached)."""

    name = "SA-LNM"

    def __init__(self, cfg: PlannerConfig):
        self.backend_cfg = cfg.backend
        self.templates = load_templates()
        self.memory: Optional[MemoryBuffer] = None
        self.llm = None

    def reset(self, scenario: WorldState, guidance: GlobalGuidance) -> None:
        self.memory = new_memory(scenario, guidance)

    def bind_backend(self, llm) -> None:
        self.llm = llm

    def decide(self, world: WorldState, guidance: GlobalGuidance) -> PlannerDecision:
        assert self.memory is not None
        bundle = assemble_prompt(guidance, self.memory, world, self.templates)
        lm = query_action(bundle, self.llm or self.backend_cfg, world.robot.v_pref)
        events = [] if lm.parse_ok else [{"type": "lnm_parse_failure"}]
        return PlannerDecision(action=lm.action, a_lm=lm, events=events)

    def observe(self, world, guidance, action, weights, reward) -> None:
        assert self.memory is not None
        self.memory = update_memory(self.memory, MemoryRecord(
            state_text=summarize_state(world, guidance),
            action=action.as_tuple(),
            weights=weights or (0.0, 1.0),
            reward=reward,
        ))


class HybridPlanner:
    """SALM and SA-LFM-fixed: RL slot + LNM, fused by the LFM or fixed weights."""

    def __init__(self, cfg: PlannerConfig):
        self.name = cfg.name
        self.cfg = cfg
        self.templates = load_templates()
        self.slot = RlSlot(weights=cfg.rl_weights, params=cfg.orca)
        self.memory: Optional[MemoryBuffer] = None
        self.llm = None
        self._held_weights: Optional[FusionWeights] = None
        self._step = 0

    def reset(self, scenario: WorldState, guidance: GlobalGuidance) -> None:
        self.slot.reset(scenario)
        self.memory = new_memory(scenario, guidance)
        self._held_weights = None
        self._step = 0

    def bind_backend(self, llm) -> None:
        self.llm = llm

    def _fusion_weights(self, a_rl: LocalAction, lm: LmAction, bundle, world, guidance) -> tuple[FusionWeights, Optional[dict], list[dict]]:
        events: list[dict] = []
        if self.cfg.force_weights is not None:
            return FusionWeights(*self.cfg.force_weights), None, events
        if self.name == "SA-LFM-fixed":
            return FusionWeights(*self.cfg.fixed_weights), None, events
        amortized = self._step % self.cfg.lfm_every_k_steps != 0
        if amortized and self._held_weights is not None and lm.parse_ok:
            return self._held_weights, None, events
        weights, graph = evaluate(a_rl, lm, self.memory, bundle, self.llm or self.cfg.backend,
                                  world=world, guidance=guidance)
        if not lm.parse_ok:
            events.append({"type": "lfm_short_circuit", "weights": [weights.s1, weights.s2]})
        self._held_weights = weights
        return weights, graph.to_json(), events

    def decide(self, world: WorldState, guidance: GlobalGuidance) -> PlannerDecision:
        assert self.memory is not None
        macro, a_rl = self.slot.act(world, guidance)
        bundle = assemble_prompt(guidance, self.memory, world, self.templates)
        lm = query_action(bundle, self.llm or self.cfg.backend, world.robot.v_pref)
        events = _macro_events(macro)
        if not lm.parse_ok:
            events.append({"type": "lnm_parse_failure"})
        weights, got, fusion_events = self._fusion_weights(a_rl, lm, bundle, world, guidance)
        events.extend(fusion_events)
        action = fuse(a_rl, lm.action, weights, world.robot.v_pref)
        self._step += 1
        return PlannerDecision(
            action=action, a_rl=a_rl, a_lm=lm,
            weights=weights.as_tuple(), got=got, events=events,
        )

    def observe(self, world, guidance, action, weights, reward) -> None:
        assert self.memory is not None
        self.memory = update_memory(self.memory, MemoryRecord(
            state_text=summarize_state(world, guidance),
            action=action.as_tuple(),
            weights=weights or (0.5, 0.5),
            reward=reward,
        ))


def build_planner(cfg: PlannerConfig):
    if cfg.name == "ORCA_baseline":
        return OrcaBaselinePlanner(cfg)
    if cfg.name == "SA-RLNM":
        return RlnmPlanner(cfg)
    if cfg.name == "SA-LNM":
        return LnmPlanner(cfg)
    return HybridPlanner(cfg)
