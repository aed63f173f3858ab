"""Spatial-temporal transformer forward pass and the policy heads.

Layout: per-row embedding, spatial attention over agents within each
timestep (robot row retained), temporal attention over each agent's own
history (last step retained), one shared cross-attention block fusing the
two streams, then waypoint and velocity heads off a pooled robot embedding.
Residual + non-learned layer normalization stabilize each block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import LocalAction, MacroAction, Vec2, clip_action
from .autodiff import Var, concat, data_of, is_var, maximum_const, tanh
from .features import FEATURE_DIM, StGraph
from .nn import MhaWeights, PolicyWeights, ShapeError, multi_head

LOG_STD_FLOOR = -5.0
LOG_STD_INIT = -0.7


@dataclass(frozen=True)
class RlnmConfig:
    feature_dim: int = FEATURE_DIM
    model_dim: int = 32
    heads: int = 4
    history: int = 4

    def __post_init__(self) -> None:
        if self.model_dim % self.heads:
            raise ShapeError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


@dataclass(frozen=True)
class ActionDistribution:
    mean: Vec2
    log_std: Vec2

    @property
    def std(self) -> Vec2:
        return (math.exp(self.log_std[0]), math.exp(self.log_std[1]))


def init_weights(seed: int, cfg: RlnmConfig = RlnmConfig()) -> PolicyWeights:
    """Seeded uniform(-0.1, 0.1) tensors; the seed rides along in the manifest."""
    rng = np.random.default_rng(seed)
    d, h, dh, f = cfg.model_dim, cfg.heads, cfg.head_dim, cfg.feature_dim

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    tensors: dict[str, np.ndarray] = {"embed.w": u(f, d), "embed.b": u(d)}
    for block in ("spatial", "temporal", "cross"):
        tensors[f"{block}.wq"] = u(h, d, dh)
        tensors[f"{block}.wk"] = u(h, d, dh)
        tensors[f"{block}.wv"] = u(h, d, dh)
        tensors[f"{block}.wo"] = u(h * dh, d)
    tensors["fuse.w"] = u(d, d)
    tensors["fuse.b"] = u(d)
    tensors["head.macro.w"] = u(2 * d, 2)
    tensors["head.macro.b"] = u(2)
    tensors["head.mean.w"] = u(2 * d, 2)
    tensors["head.mean.b"] = u(2)
    tensors["head.log_std"] = np.full(2, LOG_STD_INIT)
    return PolicyWeights(tensors=tensors, seed=seed)


def _mha(tensors, block: str) -> MhaWeights:
    return MhaWeights(
        wq=tensors[f"{block}.wq"], wk=tensors[f"{block}.wk"],
        wv=tensors[f"{block}.wv"], wo=tensors[f"{block}.wo"],
    )


def _layer_norm(x):
    """Non-learned row normalization: zero mean, unit variance per row."""
    n = data_of(x).shape[-1]
    ones_col = np.ones((n, 1)) / n
    mean = x @ ones_col  # [rows, 1]
    centered = x - mean
    var = (centered ** 2.0) @ ones_col
    return centered / ((var + 1e-6) ** 0.5)


def _row(x, i: int, n_rows: int):
    sel = np.zeros((1, n_rows))
    sel[0, i] = 1.0
    return sel @ x


def _mean_rows(x, n_rows: int):
    sel = np.ones((1, n_rows)) / n_rows
    return sel @ x


def _wrap_tensors(weights: PolicyWeights, as_vars: bool) -> dict:
    if not as_vars:
        return dict(weights.tensors)
    return {k: Var(v) for k, v in weights.tensors.items()}


def _dims(t: dict) -> tuple[int, int]:
    """(feature_dim, heads) straight from the tensor shapes."""
    return data_of(t["embed.w"]).shape[0], data_of(t["spatial.wq"]).shape[0]


def st_forward(graph: StGraph, weights: PolicyWeights | None, *, _tensors: dict | None = None):
    """Spatial stream [H, D] (robot row per timestep) and temporal stream [A, D]
    (latest row per agent)."""
    t = _tensors if _tensors is not None else dict(weights.tensors)
    feature_dim, heads = _dims(t)
    H, A, F = graph.features.shape
    if F != feature_dim:
        raise ShapeError(f"graph features {graph.features.shape} vs expected F={feature_dim}")

    sp, tm = _mha(t, "spatial"), _mha(t, "temporal")
    # Graph features stay plain arrays even in Var mode: no gradient into inputs.
    embedded = [tanh(graph.features[h] @ t["embed.w"] + t["embed.b"]) for h in range(H)]  # each [A, D]

    spatial_rows = []
    for e in embedded:
        s = _layer_norm(multi_head(e, e, e, sp, heads) + e)
        spatial_rows.append(_row(s, 0, A))  # robot query row retained
    x_s = concat(spatial_rows, axis=0)  # [H, D]

    temporal_rows = []
    for a in range(A):
        seq = concat([_row(e, a, A) for e in embedded], axis=0)  # [H, D]
        m = _layer_norm(multi_head(seq, seq, seq, tm, heads) + seq)
        temporal_rows.append(_row(m, H - 1, H))
    x_t = concat(temporal_rows, axis=0)  # [A, D]
    return x_s, x_t


def cross_modal_fuse(x_s, x_t, weights: PolicyWeights | None, *, _tensors: dict | None = None):
    """Two cross streams through one shared block, concatenated and projected."""
    t = _tensors if _tensors is not None else dict(weights.tensors)
    _, heads = _dims(t)
    if data_of(x_s).shape[-1] != data_of(x_t).shape[-1]:
        raise ShapeError(f"stream dims differ: {data_of(x_s).shape} vs {data_of(x_t).shape}")
    cx = _mha(t, "cross")
    c1 = multi_head(x_s, x_t, x_t, cx, heads)  # queries from the spatial stream
    c2 = multi_head(x_t, x_s, x_s, cx, heads)  # queries from the temporal stream
    rows = concat([c1, c2], axis=0)  # [H + A, D]
    return _layer_norm(rows @ t["fuse.w"] + t["fuse.b"] + rows)


def policy_heads(x_e, history: int, weights: PolicyWeights | None, *, _tensors: dict | None = None):
    """Pooled robot embedding -> (macro offset, action mean, clamped log_std)."""
    t = _tensors if _tensors is not None else dict(weights.tensors)
    n = data_of(x_e).shape[0]
    pooled = concat([_mean_rows(x_e, n), _row(x_e, history, n)], axis=1)  # [1, 2D]
    macro = pooled @ t["head.macro.w"] + t["head.macro.b"]
    mean = pooled @ t["head.mean.w"] + t["head.mean.b"]
    log_std = maximum_const(t["head.log_std"], LOG_STD_FLOOR)
    return macro, mean, log_std


def policy_forward(x_e, weights: PolicyWeights, *, history: int | None = None,
                   robot_position: Vec2 = (0.0, 0.0)) -> tuple[MacroAction, ActionDistribution]:
    """Macro waypoint plus a Gaussian over local velocity."""
    h = config_of(weights).history if history is None else history
    macro, mean, log_std = policy_heads(x_e, h, weights)
    return _to_outputs(macro, mean, log_std, robot_position)


def full_forward(graph: StGraph, weights: PolicyWeights, *, as_vars: bool = False):
    """graph -> (x_e, macro, mean, log_std); Var mode keeps the tape for training."""
    t = _wrap_tensors(weights, as_vars)
    x_s, x_t = st_forward(graph, weights, _tensors=t)
    x_e = cross_modal_fuse(x_s, x_t, weights, _tensors=t)
    macro, mean, log_std = policy_heads(x_e, graph.history, weights, _tensors=t)
    return t, x_e, macro, mean, log_std


def config_of(weights: PolicyWeights) -> RlnmConfig:
    f, d = weights.tensors["embed.w"].shape
    h = weights.tensors["spatial.wq"].shape[0]
    return RlnmConfig(feature_dim=f, model_dim=d, heads=h)


def _to_outputs(macro, mean, log_std, robot_position: Vec2) -> tuple[MacroAction, ActionDistribution]:
    macro_v, mean_v, std_v = data_of(macro)[0], data_of(mean)[0], data_of(log_std)
    waypoint = (robot_position[0] + float(macro_v[0]), robot_position[1] + float(macro_v[1]))
    return (
        MacroAction(kind="waypoint", waypoint=waypoint, label="rl-waypoint"),
        ActionDistribution(mean=(float(mean_v[0]), float(mean_v[1])), log_std=(float(std_v[0]), float(std_v[1]))),
    )


def deterministic_action(graph: StGraph, weights: PolicyWeights, v_pref: float,
                         robot_position: Vec2 = (0.0, 0.0)) -> tuple[MacroAction, LocalAction]:
    """Mean action, clipped: the policy's deterministic mode."""
    _, _, macro, mean, log_std = full_forward(graph, weights)
    macro_action, dist = _to_outputs(macro, mean, log_std, robot_position)
    action = clip_action(LocalAction(dist.mean[0], dist.mean[1]), v_pref)
    return macro_action, action


def sample_action(
    graph: StGraph, weights: PolicyWeights, v_pref: float, rng: np.random.Generator,
    robot_position: Vec2 = (0.0, 0.0),
) -> tuple[MacroAction, LocalAction, np.ndarray]:
    """Stochastic action; returns the raw (unclipped) sample for the trainer."""
    _, _, macro, mean, log_std = full_forward(graph, weights)
    macro_action, dist = _to_outputs(macro, mean, log_std, robot_position)
    eps = rng.standard_normal(2)
    raw = np.array(dist.mean) + np.exp(np.array(dist.log_std)) * eps
    action = clip_action(LocalAction(float(raw[0]), float(raw[1])), v_pref)
    return macro_action, action, raw
