"""Command-line entry point: ``cyber-range <command> ...``."""
from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from pydantic import ValidationError

from .adversaries import AdversaryKind
from .controllers import BanditController, BanditTable, HeuristicController, bandit_train
from .explain import FeatureMask, build_graph, classify_by_connectivity, emit_dot, read_traces
from .harness import SEED_ENV, RunConfig, accuracy_to_dict, eval_controller_accuracy, run_ablation, run_episodes
from .topology import default_topology, load_topology


class CLIError(Exception):
    pass


def _seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CLIError(f"{SEED_ENV}={env!r} is not an integer") from None


def _write_json(path: str | None, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_config(path: str) -> RunConfig:
    try:
        return RunConfig.load(path)
    except ValidationError as exc:
        lines = [f"  {'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise CLIError(f"invalid config {path}:\n" + "\n".join(lines)) from None


def cmd_run(args) -> None:
    cfg = _load_config(args.config)
    result = run_episodes(cfg, out_dir=args.out_dir, base_dir=Path(args.config).parent)
    sys.stdout.write(result.stats.table())


def cmd_train_bandit(args) -> None:
    table = bandit_train(None, args.timesteps, args.epsilon, random.Random(_seed(args.seed)))
    table.save(args.out)
    print(f"trained {len(table)} window bandits -> {args.out}")


def cmd_eval_controllers(args) -> None:
    if args.controller == "heuristic":
        controller = HeuristicController()
    else:
        if not args.bandit_table:
            raise CLIError("--bandit-table is required for the bandit controller")
        controller = BanditController(BanditTable.load(args.bandit_table))
    table = eval_controller_accuracy(controller, args.episodes, random.Random(_seed(args.seed)))
    doc = {"controller": args.controller, "episodes": args.episodes, "accuracy": accuracy_to_dict(table)}
    if args.out:
        _write_json(args.out, doc)
    print(f"{'adversary':<10}{'correct':>9}{'total':>8}{'accuracy':>10}")
    for name, row in sorted(table.items()):
        print(f"{name:<10}{row.correct:>9}{row.total:>8}{100 * row.accuracy:>9.1f}%")


def cmd_explain(args) -> None:
    net = load_topology(args.topology) if args.topology else default_topology()
    traces = read_traces(*args.traces)
    if not traces:
        raise CLIError("no trace records found")
    graph = build_graph(
        traces,
        args.max_steps,
        perspective=args.perspective,
        granularity=args.granularity,
        decoy_nodes=args.decoy_nodes,
        net=net,
    )
    dot = emit_dot(graph)
    if args.dot:
        Path(args.dot).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    if args.csv:
        Path(args.csv).write_text(graph.to_csv(), encoding="utf-8")
    if args.classify:
        counts: dict[str, dict[str, int]] = {}
        for t in traces:
            verdict = classify_by_connectivity(build_graph([t], args.max_steps or 4, net=net))
            truth = t.adversary.label if t.adversary is not None else "unknown"
            row = counts.setdefault(truth, {})
            row[verdict.label] = row.get(verdict.label, 0) + 1
        _write_json(args.classify, counts)


def cmd_ablate(args) -> None:
    cfg = _load_config(args.config)
    masks = [FeatureMask.parse(m) for m in args.mask.split(",") if m.strip()]
    results = run_ablation(cfg, masks, base_dir=Path(args.config).parent)
    doc = {name: s.to_dict() for name, s in results.items()}
    if args.out:
        _write_json(args.out, doc)
    print(f"{'mask':<14}{'mean':>12}{'std':>12}{'min':>12}{'max':>12}")
    for name, s in results.items():
        print(f"{name:<14}{s.mean:>12.3f}{s.std:>12.3f}{s.min:>12.3f}{s.max:>12.3f}")


def cmd_topology(args) -> None:
    net = load_topology(args.topology) if args.topology else default_topology()
    _write_json(args.out, net.to_dict())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyber-range", description="Turn-based network defence simulation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a batch of episodes from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train-bandit", help="train the bandit controller")
    t.add_argument("--timesteps", type=int, default=15000)
    t.add_argument("--epsilon", type=float, default=0.01)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_bandit)

    e = sub.add_parser("eval-controllers", help="controller prediction accuracy on 4-step openings")
    e.add_argument("--controller", choices=("heuristic", "bandit"), required=True)
    e.add_argument("--bandit-table")
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_controllers)

    x = sub.add_parser("explain", help="build an action-outcome transition graph from traces")
    x.add_argument("--traces", nargs="+", required=True)
    x.add_argument("--max-steps", type=int)
    x.add_argument("--dot")
    x.add_argument("--csv")
    x.add_argument("--perspective", choices=("red", "blue"), default="red")
    x.add_argument("--granularity", choices=("host", "subnet"), default="host")
    x.add_argument("--decoy-nodes", action="store_true")
    x.add_argument("--topology")
    x.add_argument("--classify", metavar="FILE", help="write per-episode connectivity verdicts vs ground truth")
    x.set_defaults(func=cmd_explain)

    a = sub.add_parser("ablate", help="feature ablation study")
    a.add_argument("--mask", required=True, help="comma-separated masks; join groups with '+', e.g. access,scan,prev")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("topology", help="dump the canonical network as JSON")
    g.add_argument("--topology")
    g.add_argument("--out")
    g.set_defaults(func=cmd_topology)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CLIError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
