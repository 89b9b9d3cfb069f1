"""Command-line entry points: demo collection, training, evaluation,
distillation, replay verification, and the WebSocket service."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .baselines import collect_demos
from .gail_trainer import load_demos, write_demos
from .harness import (RunConfig, bc_train_run, distill_run, e2e_train_run,
                      load_run_config, make_agent, replay_demo_episode,
                      run_evaluation, train_run)
from .world_sim import parse_scenario_kind

log = logging.getLogger("moddrive.cli")


def _run_config_from(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return RunConfig(
        scenarios=[args.scenario] if isinstance(args.scenario, str) else list(args.scenario),
        iterations=args.iterations, batch_size=args.batch_size, lr=args.lr,
        entropy_weight=args.entropy_weight, seed=args.seed,
        demos_path=args.demos, out_dir=args.out_dir,
        eval_episodes=args.eval_episodes,
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON (overrides other flags)")
    p.add_argument("--scenario", default="single_follow")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=512, dest="batch_size")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--entropy-weight", type=float, default=0.1, dest="entropy_weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--demos", default="demos.jsonl")
    p.add_argument("--out-dir", default="runs", dest="out_dir")
    p.add_argument("--eval-episodes", type=int, default=100, dest="eval_episodes")


def _cmd_collect(args) -> int:
    kind = parse_scenario_kind(args.scenario)
    demos = collect_demos(kind, args.episodes, base_seed=args.seed)
    write_demos(args.out, demos)
    print(json.dumps({"scenario": kind.value, "episodes": len(demos), "out": args.out}))
    return 0


def _cmd_train(args) -> int:
    result = train_run(_run_config_from(args), progress_every=50)
    print(json.dumps(result, indent=2))
    return 0


def _cmd_train_e2e(args) -> int:
    result = e2e_train_run(_run_config_from(args), progress_every=50)
    print(json.dumps(result, indent=2))
    return 0


def _cmd_train_bc(args) -> int:
    result = bc_train_run(_run_config_from(args), epochs=args.epochs)
    print(json.dumps(result, indent=2))
    return 0


def _cmd_eval(args) -> int:
    agent = make_agent(args.agent, args.checkpoint, seed=args.seed)
    metrics = run_evaluation(agent, parse_scenario_kind(args.scenario),
                             episodes=args.episodes, base_seed=args.seed,
                             perturb=args.perturb)
    print(json.dumps(metrics.to_json(), indent=2))
    return 0


def _cmd_distill(args) -> int:
    result = distill_run(load_run_config(args.config), progress_every=50)
    print(json.dumps(result, indent=2))
    return 0


def _cmd_replay(args) -> int:
    demos = load_demos(args.demos)
    report = replay_demo_episode(demos, args.episode)
    print(json.dumps(report))
    return 0 if report["max_pose_error"] < 1e-9 else 1


def _cmd_serve(args) -> int:
    from .server import serve
    serve(args.port, host=args.host, out_path=args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moddrive",
                                     description="modular driving stack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect-expert", help="record scripted demonstrations")
    p.add_argument("--scenario", default="single_follow")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="demos.jsonl")
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("train", help="train the modular decision policy")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-e2e", help="train the end-to-end control policy")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train_e2e)

    p = sub.add_parser("train-bc", help="train the behavior-cloning baseline")
    _add_train_flags(p)
    p.add_argument("--epochs", type=int, default=300)
    p.set_defaults(func=_cmd_train_bc)

    p = sub.add_parser("eval", help="evaluate an agent")
    p.add_argument("--agent", required=True,
                   choices=["rule", "expert", "policy", "bc", "e2e"])
    p.add_argument("--scenario", default="single_follow")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--perturb", type=float, default=0.0,
                   help="start-pose lateral perturbation range, meters")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("distill", help="joint training across scenarios")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("replay", help="verify a recorded episode replays exactly")
    p.add_argument("--demos", required=True)
    p.add_argument("--episode", type=int, default=0)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("serve", help="run the WebSocket driving service")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--out", default="human_demos.jsonl")
    p.set_defaults(func=_cmd_serve)

    return parser


def cli_dispatch(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
