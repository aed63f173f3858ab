#!/usr/bin/env python3
"""Full benchmark: every planner on both tasks, emitting the SR/SS table.

Usage:
    python scripts/run_benchmark.py --out runs/bench --cases 50 --seed 7 [--backend mock]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from salm.evaluation import BatchConfig, MetricsTable, emit_report, metrics_row, run_batch, run_manifest, write_manifest
from salm.llm import LlmBackend
from salm.planners import PLANNER_NAMES, PlannerConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/bench")
    parser.add_argument("--cases", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--feedback-prob", type=float, default=0.5)
    parser.add_argument("--backend", choices=["mock", "http"], default="mock")
    parser.add_argument("--endpoint", default="")
    parser.add_argument("--model", default="gpt-4o")
    parser.add_argument("--planners", nargs="*", default=list(PLANNER_NAMES))
    parser.add_argument("--no-got", action="store_true")
    args = parser.parse_args()

    if args.backend == "mock":
        backend = LlmBackend(kind="mock")
    else:
        backend = LlmBackend(kind="http", endpoint=args.endpoint, model=args.model)

    rows = []
    t0 = time.perf_counter()
    for name in args.planners:
        for task in ("p2p", "hf"):
            cfg = PlannerConfig(name=name, backend=backend)
            batch = BatchConfig(task=task, n_cases=args.cases, seed0=args.seed,
                                feedback_probability=args.feedback_prob,
                                record_got=not args.no_got)
            manifest = run_manifest(cfg, batch)
            run_dir = Path(args.out) / manifest["run_id"]
            run_dir.mkdir(parents=True, exist_ok=True)
            write_manifest(manifest, run_dir)
            logs = run_batch(cfg, task, args.cases, args.seed, args.feedback_prob,
                             out_dir=str(run_dir), batch=batch)
            row = metrics_row(name, task, logs, batch.timeout_steps)
            rows.append(row)
            print(f"[{time.perf_counter() - t0:6.1f}s] {name:13s} {task}: "
                  f"SR {row.success_rate:5.1f}  SS {row.social_score:5.1f}  "
                  f"coll {row.collision_rate:5.1f}  timeout {row.timeout_rate:5.1f}")
    csv_path, md_path = emit_report(MetricsTable(rows), args.out)
    print(f"report: {csv_path} / {md_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
