"""Command-line interface: batch evaluation, log replay, scenario dumps, serving."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .episode import load_log_lines
from .evaluation import (
    BatchConfig,
    MetricsTable,
    emit_report,
    metrics_row,
    run_batch,
    run_manifest,
    write_manifest,
)
from .llm import LlmBackend
from .orca import OrcaParams
from .planners import PLANNER_NAMES, PlannerConfig
from .rlnm.nn import PolicyWeights
from .sim import spawn_scenario
from .core import scenario_to_json


def _load_file_config(path: str | None) -> dict:
    if not path:
        return {}
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib

        return tomllib.loads(raw.decode())
    return json.loads(raw)


def _orca_from_config(file_cfg: dict) -> OrcaParams:
    section = file_cfg.get("orca", {})
    return OrcaParams(
        neighbor_dist=float(section.get("neighbor_dist", 10.0)),
        time_horizon=float(section.get("time_horizon", 5.0)),
        time_horizon_obst=float(section.get("time_horizon_obst", 5.0)),
        max_neighbors=int(section.get("max_neighbors", 10)),
    )


def _backend_from_args(args: argparse.Namespace, file_cfg: dict) -> LlmBackend:
    section = file_cfg.get("backend", {})
    if args.backend == "mock":
        return LlmBackend(kind="mock", rules_path=section.get("rules_path", ""))
    return LlmBackend(
        kind="http",
        endpoint=args.endpoint or section.get("endpoint", ""),
        model=args.model or section.get("model", "gpt-4o"),
        timeout=float(section.get("timeout", 30.0)),
        max_retries=int(section.get("max_retries", 2)),
        temperature=float(section.get("temperature", 0.0)),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = _load_file_config(args.config)
    backend = _backend_from_args(args, file_cfg)
    engine_cfg = file_cfg.get("engine", {})
    rl_weights = PolicyWeights.load(args.weights) if args.weights else None
    tasks = ["p2p", "hf"] if args.task == "both" else [args.task]
    rows = []
    for task in tasks:
        planner_cfg = PlannerConfig(name=args.planner, backend=backend, rl_weights=rl_weights,
                                    orca=_orca_from_config(file_cfg))
        batch = BatchConfig(
            task=task,
            n_cases=args.cases,
            seed0=args.seed,
            feedback_probability=args.feedback_prob,
            n_pedestrians=args.pedestrians,
            command_extra=args.command_extra,
            timeout_steps=int(engine_cfg.get("timeout_steps", 120)),
            record_got=not args.no_got,
            workers=args.workers,
        )
        out_dir = None
        if args.out:
            manifest = run_manifest(planner_cfg, batch)
            out_dir = str(Path(args.out) / manifest["run_id"])
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_manifest(manifest, out_dir)
        logs = run_batch(planner_cfg, task, args.cases, args.seed, args.feedback_prob,
                         out_dir=out_dir, batch=batch)
        row = metrics_row(args.planner, task, logs, batch.timeout_steps)
        rows.append(row)
        print(f"{args.planner} {task}: SR {row.success_rate:.1f}%  SS {row.social_score:.1f}  "
              f"collisions {row.collision_rate:.1f}%  timeouts {row.timeout_rate:.1f}%")
    if args.out:
        emit_report(MetricsTable(rows), args.out)
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    steps, final = load_log_lines(args.log)
    if not steps and not final:
        print("empty log", file=sys.stderr)
        return 1
    total = 0.0
    for doc in steps:
        total += doc["reward"]["total"]
        events = ";".join(e.get("type", "?") for e in doc.get("events", []))
        weights = doc.get("weights")
        wtxt = f" s1/s2 {weights[0]:.2f}/{weights[1]:.2f}" if weights else ""
        print(f"t={doc['t']:3d} pos=({doc['world']['robot']['pos'][0]:6.2f}, {doc['world']['robot']['pos'][1]:6.2f})"
              f" act=({doc['action'][0]:5.2f}, {doc['action'][1]:5.2f}) r={doc['reward']['total']:7.3f}"
              f" v{doc['guidance']['version']}{wtxt}{'  [' + events + ']' if events else ''}")
    print(f"outcome={final.get('outcome')} steps={final.get('steps')} nav_time={final.get('nav_time')}s "
          f"cumulative_reward={total:.3f}")
    return 0


def cmd_scenario(args: argparse.Namespace) -> int:
    world = spawn_scenario(args.seed, args.pedestrians, args.task)
    doc = scenario_to_json(world)
    if args.dump:
        print(json.dumps(doc, indent=2))
    else:
        print(json.dumps({"schema": doc["schema"], "agents": len(doc["agents"])}))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import ServerConfig, create_app

    app = create_app(ServerConfig(max_sessions=args.max_sessions, grace_timeout_s=args.grace_timeout,
                                  log_dir=args.log_dir or None))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="run a seeded episode batch and report SR/SS")
    p_eval.add_argument("--planner", choices=PLANNER_NAMES, default="SALM")
    p_eval.add_argument("--task", choices=["p2p", "hf", "both"], default="p2p")
    p_eval.add_argument("--cases", type=int, default=50)
    p_eval.add_argument("--seed", type=int, default=7)
    p_eval.add_argument("--backend", choices=["mock", "http"], default="mock")
    p_eval.add_argument("--endpoint", default="")
    p_eval.add_argument("--model", default="")
    p_eval.add_argument("--feedback-prob", type=float, default=0.5)
    p_eval.add_argument("--pedestrians", type=int, default=10)
    p_eval.add_argument("--command-extra", default="", help="appended to the initial command")
    p_eval.add_argument("--weights", default="", help="policy weights JSON for the RL slot")
    p_eval.add_argument("--no-got", action="store_true", help="omit thought graphs from logs")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--out", default="", help="directory for logs, manifest, and report")
    p_eval.add_argument("--config", default="", help="TOML/JSON config file")
    p_eval.set_defaults(func=cmd_eval)

    p_replay = sub.add_parser("replay", help="pretty-print an episode log")
    p_replay.add_argument("--log", required=True)
    p_replay.set_defaults(func=cmd_replay)

    p_scen = sub.add_parser("scenario", help="generate a seeded scenario")
    p_scen.add_argument("--seed", type=int, required=True)
    p_scen.add_argument("--pedestrians", type=int, default=10)
    p_scen.add_argument("--task", choices=["p2p", "hf"], default="p2p")
    p_scen.add_argument("--dump", action="store_true", help="print the full scenario JSON")
    p_scen.set_defaults(func=cmd_scenario)

    p_serve = sub.add_parser("serve", help="run the live session server")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8008)
    p_serve.add_argument("--max-sessions", type=int, default=8)
    p_serve.add_argument("--grace-timeout", type=float, default=60.0)
    p_serve.add_argument("--log-dir", default="", help="persist finished session logs here")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # harness errors exit nonzero; batch outcomes do not
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
