"""Desk-scale policy-gradient trainer for the transformer policy.

Plain REINFORCE with reward-to-go and a batch-mean baseline over seeded
empty-or-sparse-crowd episodes.  The analytic gradient comes from the
autodiff tape and is validated against central finite differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..core import LocalAction, WorldState, clip_action
from ..episode import EpisodeConfig, current_target, local_reward
from ..guidance import GlobalGuidance, P2P, ROBOT_FIRST
from ..orca import OrcaParams
from ..sim import spawn_scenario, step_world
from .autodiff import Var
from .features import StGraph, build_st_graph
from .model import (
    RlnmConfig,
    cross_modal_fuse,
    deterministic_action,
    init_weights,
    policy_heads,
    sample_action,
    st_forward,
)
from .nn import PolicyWeights

LOG_2PI = math.log(2.0 * math.pi)


class TrainingDivergedError(RuntimeError):
    """NaN appeared in weights or gradients; carries the iteration index."""


@dataclass
class TrainConfig:
    iterations: int = 200
    episodes_per_iter: int = 2
    horizon: int = 32
    lr: float = 0.01
    max_grad_norm: float = 2.0  # REINFORCE stabilizer; 0 disables clipping
    gamma: float = 0.95
    seed: int = 0
    n_pedestrians: int = 0
    goal_distance: float = 4.0
    arena_radius: float = 6.0
    model: RlnmConfig = field(default_factory=RlnmConfig)
    curve_path: Optional[str] = None


@dataclass
class EpisodeTrace:
    graphs: list[StGraph]
    raw_actions: list[np.ndarray]
    rewards: list[float]

    def returns_to_go(self, gamma: float) -> list[float]:
        out: list[float] = []
        acc = 0.0
        for r in reversed(self.rewards):
            acc = r + gamma * acc
            out.append(acc)
        return out[::-1]


def _training_scenario(cfg: TrainConfig, seed: int) -> tuple[WorldState, GlobalGuidance]:
    world = _retarget(spawn_scenario(seed, cfg.n_pedestrians, "p2p", arena_radius=cfg.arena_radius),
                      cfg.goal_distance)
    g = GlobalGuidance(task=P2P, target=world.robot.goal, social_distance=0.4,
                       norm=ROBOT_FIRST, stop_distance=1.0)
    return world, g


def _retarget(world: WorldState, goal_distance: float) -> WorldState:
    from dataclasses import replace

    goal = (world.robot.position[0], world.robot.position[1] + goal_distance)
    return replace(world, robot=replace(world.robot, goal=goal))


def rollout(weights: PolicyWeights, cfg: TrainConfig, seed: int, rng: np.random.Generator) -> EpisodeTrace:
    """One stochastic episode; records graphs, raw actions, and rewards."""
    world, g = _training_scenario(cfg, seed)
    history = [world]
    params = OrcaParams()
    trace = EpisodeTrace([], [], [])
    for _ in range(cfg.horizon):
        graph = build_st_graph(history, g, cfg.model.history)
        try:
            _, action, raw = sample_action(graph, weights, world.robot.v_pref, rng, world.robot.position)
        except (ValueError, FloatingPointError) as exc:
            raise TrainingDivergedError(f"policy produced a non-finite action at step {len(trace.rewards)}: {exc}") from exc
        if not np.isfinite(raw).all():
            raise TrainingDivergedError(f"policy sample overflowed at step {len(trace.rewards)}: {raw}")
        w2 = step_world(world, action, params)
        reward = local_reward(world, action, w2, g)
        trace.graphs.append(graph)
        trace.raw_actions.append(raw)
        trace.rewards.append(reward.total)
        world = w2
        history.append(world)
        if reward.success_bonus > 0:
            break
    return trace


def surrogate_loss(weights_tensors: dict, traces: list[EpisodeTrace], gamma: float):
    """-E[sum_t log pi(a_t|s_t) * advantage_t]; differentiable in the tensors."""
    all_returns = [r for tr in traces for r in tr.returns_to_go(gamma)]
    baseline = float(np.mean(all_returns))
    scale = float(np.std(all_returns)) + 1e-8

    total = None
    count = 0
    for tr in traces:
        returns = tr.returns_to_go(gamma)
        for graph, raw, ret in zip(tr.graphs, tr.raw_actions, returns):
            x_s, x_t = st_forward(graph, None, _tensors=weights_tensors)  # type: ignore[arg-type]
            x_e = cross_modal_fuse(x_s, x_t, None, _tensors=weights_tensors)  # type: ignore[arg-type]
            _, mean, log_std = policy_heads(x_e, graph.history, None, _tensors=weights_tensors)  # type: ignore[arg-type]
            adv = (ret - baseline) / scale
            diff = Var(raw.reshape(1, 2)) - mean
            inv_var = (log_std * (-2.0)).exp()
            logp = ((diff ** 2.0) * inv_var).sum() * (-0.5) - log_std.sum() - LOG_2PI
            term = logp * (-adv)
            total = term if total is None else total + term
            count += 1
    assert total is not None, "no steps collected"
    return total / float(count)


def policy_gradient(weights: PolicyWeights, traces: list[EpisodeTrace], gamma: float) -> tuple[dict[str, np.ndarray], float]:
    tensors = {k: Var(v) for k, v in weights.tensors.items()}
    loss = surrogate_loss(tensors, traces, gamma)
    loss.backward()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in tensors.items()}
    return grads, float(loss.data)


def loss_value(weights: PolicyWeights, traces: list[EpisodeTrace], gamma: float) -> float:
    tensors = {k: Var(v) for k, v in weights.tensors.items()}
    return float(surrogate_loss(tensors, traces, gamma).data)


def gradient_check(
    weights: PolicyWeights,
    traces: list[EpisodeTrace],
    gamma: float,
    rng: np.random.Generator,
    h: float = 1e-5,
) -> float:
    """Relative error between the analytic directional derivative and central
    finite differences along a random unit direction."""
    grads, _ = policy_gradient(weights, traces, gamma)
    direction = {k: rng.standard_normal(v.shape) for k, v in weights.tensors.items()}
    norm = math.sqrt(sum(float((d ** 2).sum()) for d in direction.values()))
    direction = {k: d / norm for k, d in direction.items()}

    analytic = sum(float((grads[k] * direction[k]).sum()) for k in grads)

    def shifted(sign: float) -> PolicyWeights:
        return PolicyWeights(
            {k: weights.tensors[k] + sign * h * direction[k] for k in weights.tensors},
            weights.seed,
        )

    f_plus = loss_value(shifted(+1.0), traces, gamma)
    f_minus = loss_value(shifted(-1.0), traces, gamma)
    fd = (f_plus - f_minus) / (2.0 * h)
    return abs(fd - analytic) / max(abs(fd) + abs(analytic), 1e-12)


def mean_return(weights: PolicyWeights, cfg: TrainConfig, seeds: list[int]) -> float:
    """Deterministic-mode evaluation return, averaged over fixed seeds."""
    totals = []
    params = OrcaParams()
    for seed in seeds:
        world, g = _training_scenario(cfg, seed)
        history = [world]
        total = 0.0
        for t in range(cfg.horizon):
            graph = build_st_graph(history, g, cfg.model.history)
            _, action = deterministic_action(graph, weights, world.robot.v_pref, world.robot.position)
            w2 = step_world(world, action, params)
            reward = local_reward(world, action, w2, g)
            total += (cfg.gamma ** t) * reward.total
            world = w2
            history.append(world)
            if reward.success_bonus > 0:
                break
        totals.append(total)
    return float(np.mean(totals))


def train_policy(cfg: TrainConfig, on_iteration: Optional[Callable[[int, float], None]] = None) -> PolicyWeights:
    """REINFORCE training loop; 0 iterations returns the initialization unchanged."""
    weights = init_weights(cfg.seed, cfg.model)
    curve: list[tuple[int, float]] = []
    rng = np.random.default_rng(cfg.seed + 1)
    for it in range(cfg.iterations):
        traces = [rollout(weights, cfg, seed=cfg.seed + 1000 + it * cfg.episodes_per_iter + e, rng=rng)
                  for e in range(cfg.episodes_per_iter)]
        grads, loss = policy_gradient(weights, traces, cfg.gamma)
        if not math.isfinite(loss) or any(not np.isfinite(g).all() for g in grads.values()):
            raise TrainingDivergedError(f"non-finite loss/gradient at iteration {it}: loss={loss}")
        if cfg.max_grad_norm > 0:
            norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
            if norm > cfg.max_grad_norm:
                scale = cfg.max_grad_norm / norm
                grads = {k: g * scale for k, g in grads.items()}
        for k in weights.tensors:
            weights.tensors[k] = weights.tensors[k] - cfg.lr * grads[k]
        ret = float(np.mean([sum(t.rewards) for t in traces]))
        curve.append((it, ret))
        if on_iteration:
            on_iteration(it, ret)
    if cfg.curve_path:
        with open(cfg.curve_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "mean_return"])
            writer.writerows(curve)
    return weights
