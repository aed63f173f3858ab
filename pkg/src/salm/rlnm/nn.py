"""Attention primitives and the policy weight container."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import concat, data_of, is_var, softmax_rows

WEIGHTS_SCHEMA = "salm-weights/1"
INIT_SPAN = 0.1


class ShapeError(ValueError):
    """Matrix dimensions do not line up; message carries both shapes."""


def softmax(x, axis: int = -1):
    arr = np.asarray(x, dtype=np.float64)
    shifted = arr - arr.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention(Q, K, V, d_h: int):
    """Scaled dot-product attention; accepts arrays or autodiff Vars."""
    if d_h <= 0:
        raise ShapeError(f"d_h must be positive, got {d_h}")
    q, k, v = data_of(Q), data_of(K), data_of(V)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"Q/K inner dims differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"K/V row counts differ: {k.shape} vs {v.shape}")
    scores = (Q @ K.T) * (1.0 / math.sqrt(d_h))
    return softmax_rows(scores) @ V


@dataclass(frozen=True)
class MhaWeights:
    """Per-head Q/K/V projections [h, D, d_h] and the output projection [h*d_h, D]."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @property
    def heads(self) -> int:
        return data_of(self.wq).shape[0]


def _head_slice(stack, i: int):
    """One head's projection matrix; keeps gradients flowing through Var stacks."""
    if is_var(stack):
        from .autodiff import Var

        def backward(g, stack=stack, i=i):
            full = np.zeros_like(stack.data)
            full[i] = g
            return (full,)

        return Var(stack.data[i], (stack,), backward)
    return stack[i]


def multi_head(Q, K, V, weights: MhaWeights, h: int):
    """h parallel attentions on projected slices, concatenated and projected out."""
    if data_of(weights.wq).shape[0] != h:
        raise ShapeError(f"projection stack has {data_of(weights.wq).shape[0]} heads, expected {h}")
    d_h = data_of(weights.wq).shape[2]
    outputs = []
    for i in range(h):
        qi = Q @ _head_slice(weights.wq, i)
        ki = K @ _head_slice(weights.wk, i)
        vi = V @ _head_slice(weights.wv, i)
        outputs.append(attention(qi, ki, vi, d_h))
    return concat(outputs, axis=-1) @ weights.wo


@dataclass
class PolicyWeights:
    """Named tensors plus the seed and shape manifest they were built from."""

    tensors: dict[str, np.ndarray]
    seed: int
    schema: str = WEIGHTS_SCHEMA

    def shapes(self) -> dict[str, list[int]]:
        return {name: list(np.asarray(t).shape) for name, t in sorted(self.tensors.items())}

    def manifest_hash(self) -> str:
        doc = {"schema": self.schema, "seed": self.seed, "shapes": self.shapes()}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def copy(self) -> "PolicyWeights":
        return PolicyWeights({k: v.copy() for k, v in self.tensors.items()}, self.seed, self.schema)

    def save(self, path: str | Path) -> None:
        doc = {
            "schema": self.schema,
            "seed": self.seed,
            "manifest": self.shapes(),
            "tensors": {k: np.asarray(v).tolist() for k, v in sorted(self.tensors.items())},
        }
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyWeights":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != WEIGHTS_SCHEMA:
            raise ValueError(f"unsupported weights schema {doc.get('schema')!r}")
        tensors = {k: np.asarray(v, dtype=np.float64) for k, v in doc["tensors"].items()}
        w = cls(tensors=tensors, seed=int(doc["seed"]))
        if w.shapes() != doc["manifest"]:
            raise ValueError("weights manifest does not match tensor shapes")
        return w
