"""The RL slot: either the ORCA-backed fallback or a transformer policy."""

from __future__ import annotations

from collections import deque
from dataclasses import replace
from typing import Optional

import numpy as np

from ..core import LocalAction, MacroAction, ObservableState, WorldState, observable_projection
from ..episode import current_target
from ..guidance import GlobalGuidance
from ..orca import OrcaParams, orca_velocity
from .features import build_st_graph
from .model import config_of, deterministic_action, sample_action
from .nn import PolicyWeights


def fallback_policy(
    w: WorldState,
    g: GlobalGuidance,
    params: OrcaParams = OrcaParams(),
) -> LocalAction:
    """Deterministic lower-bound policy: preferred velocity toward the current
    target, resolved through ORCA with pedestrians inflated by the social
    distance.  The user is a plain neighbor (never inflated) so following and
    handover targets stay reachable."""
    target = current_target(g, w)
    me = replace(w.robot, goal=target)
    neighbors: list[ObservableState] = []
    for p in w.pedestrians:
        obs = observable_projection(p)
        neighbors.append(ObservableState(obs.position, obs.velocity, obs.radius + g.social_distance))
    if w.user is not None:
        neighbors.append(observable_projection(w.user))
    return orca_velocity(me, neighbors, params, dt=w.dt)


class RlSlot:
    """Per-episode stateful wrapper the planners call for the RL action."""

    def __init__(self, weights: Optional[PolicyWeights] = None, params: OrcaParams = OrcaParams(),
                 stochastic_seed: Optional[int] = None):
        self.weights = weights
        self.params = params
        self.history: deque[WorldState] = deque(maxlen=1 if weights is None else config_of(weights).history)
        self.rng = None if stochastic_seed is None else np.random.default_rng(stochastic_seed)

    def reset(self, scenario: WorldState) -> None:
        self.history.clear()
        self.history.append(scenario)

    def act(self, w: WorldState, g: GlobalGuidance) -> tuple[Optional[MacroAction], LocalAction]:
        if not self.history or self.history[-1] is not w:
            self.history.append(w)
        if self.weights is None:
            return None, fallback_policy(w, g, self.params)
        graph = build_st_graph(list(self.history), g, config_of(self.weights).history)
        if self.rng is None:
            return deterministic_action(graph, self.weights, w.robot.v_pref, w.robot.position)
        macro, action, _ = sample_action(graph, self.weights, w.robot.v_pref, self.rng, w.robot.position)
        return macro, action
