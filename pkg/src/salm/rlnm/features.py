"""Spatio-temporal graph construction from observation history."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import WorldState, vec_dist
from ..episode import current_target
from ..guidance import PEDESTRIAN_FIRST, GlobalGuidance

# Per-agent rows: [rel_x, rel_y, vel_x, vel_y, radius, dist_to_robot,
#                  target_dx, target_dy, social_distance, norm_flag]
# The last four columns are guidance conditioning, set on the robot row only.
FEATURE_DIM = 10


@dataclass(frozen=True)
class StGraph:
    """Dense agent features over a history window.

    features[t, a, :] with rows ordered robot first, then the user and
    pedestrians by id.  Agents are fully connected within a timestep; each
    agent chains to itself across timesteps.
    """

    features: np.ndarray  # [H, A, F]
    agent_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.features.ndim != 3:
            raise ValueError("features must be [H, A, F]")
        if self.features.shape[0] < 1:
            raise ValueError("history must be >= 1")
        if self.features.shape[1] != len(self.agent_ids):
            raise ValueError("agent_ids must match the agent axis")

    @property
    def history(self) -> int:
        return self.features.shape[0]

    @property
    def n_agents(self) -> int:
        return self.features.shape[1]


def _world_rows(w: WorldState, g: GlobalGuidance) -> tuple[np.ndarray, tuple[int, ...]]:
    robot = w.robot
    others = sorted(w.humans(), key=lambda a: a.id)
    rows = np.zeros((1 + len(others), FEATURE_DIM), dtype=np.float64)
    tx, ty = current_target(g, w)
    rows[0] = [
        0.0, 0.0, robot.velocity[0], robot.velocity[1], robot.radius, 0.0,
        tx - robot.position[0], ty - robot.position[1],
        g.social_distance, 1.0 if g.norm == PEDESTRIAN_FIRST else 0.0,
    ]
    for i, a in enumerate(others, start=1):
        rel = (a.position[0] - robot.position[0], a.position[1] - robot.position[1])
        rows[i] = [
            rel[0], rel[1], a.velocity[0], a.velocity[1], a.radius,
            vec_dist(a.position, robot.position), 0.0, 0.0, 0.0, 0.0,
        ]
    return rows, (robot.id, *(a.id for a in others))


def build_st_graph(obs_history: Sequence[WorldState], g: GlobalGuidance, H: int) -> StGraph:
    """Stack the last H observations; shorter histories repeat the oldest state."""
    if not obs_history:
        raise ValueError("observation history must be non-empty")
    if H < 1:
        raise ValueError("H must be >= 1")
    window = list(obs_history[-H:])
    while len(window) < H:
        window.insert(0, window[0])
    frames = []
    ids: tuple[int, ...] | None = None
    for w in window:
        rows, frame_ids = _world_rows(w, g)
        if ids is None:
            ids = frame_ids
        elif frame_ids != ids:
            raise ValueError("agent set changed within the history window")
        frames.append(rows)
    assert ids is not None
    return StGraph(features=np.stack(frames, axis=0), agent_ids=ids)
