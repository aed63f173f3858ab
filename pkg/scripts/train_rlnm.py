#!/usr/bin/env python3
"""Desk-scale policy-gradient training for the transformer policy.

Usage:
    python scripts/train_rlnm.py --out runs/policy --iterations 200 [--pedestrians 2]
Evaluates the untrained and trained policies on held-out seeds, writes the
weights JSON and the training curve CSV.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from salm.rlnm.model import init_weights
from salm.rlnm.train import TrainConfig, mean_return, train_policy


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/policy")
    parser.add_argument("--iterations", type=int, default=200)
    parser.add_argument("--episodes-per-iter", type=int, default=2)
    parser.add_argument("--horizon", type=int, default=32)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pedestrians", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(
        iterations=args.iterations,
        episodes_per_iter=args.episodes_per_iter,
        horizon=args.horizon,
        lr=args.lr,
        seed=args.seed,
        n_pedestrians=args.pedestrians,
        curve_path=str(out / "curve.csv"),
    )
    eval_seeds = list(range(50, 60))
    before = mean_return(init_weights(cfg.seed, cfg.model), cfg, eval_seeds)
    print(f"initial mean return: {before:.3f}")

    def progress(it: int, ret: float) -> None:
        if it % 20 == 0 or it == cfg.iterations - 1:
            print(f"iter {it:4d}  rollout return {ret:8.3f}")

    weights = train_policy(cfg, on_iteration=progress)
    after = mean_return(weights, cfg, eval_seeds)
    weights.save(out / "weights.json")
    print(f"trained mean return: {after:.3f}  (improvement {after - before:+.3f})")
    print(f"weights: {out / 'weights.json'}  curve: {cfg.curve_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
