"""Command-line entry point: ``scenenav <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .adapt import STRATEGIES
from .episodes import STYLES, make_episodes, save_episodes
from .harness import (
    ExperimentConfig,
    ablate,
    eval_environments,
    persona_for,
    report,
    run_experiment,
    train_environments,
    resolve_policy,
)
from .world import EnvSpec, generate_environment, load_environment, save_environment


def load_config(args) -> ExperimentConfig:
    """Config file first, then explicit flags on top."""
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    cfg = ExperimentConfig.from_dict(base)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.repeats is not None:
        updates["repeats"] = args.repeats
    if args.episodes is not None:
        updates["episodes"] = args.episodes
    if args.out is not None:
        updates["out"] = args.out
    if getattr(args, "alpha", None) is not None and getattr(args, "proportion", None) is not None:
        raise SystemExit("--alpha and --proportion are mutually exclusive")
    if getattr(args, "alpha", None) is not None:
        updates["memory"] = f"gr:{args.alpha}"
    if getattr(args, "proportion", None) is not None:
        updates["memory"] = f"proportion:{args.proportion}"
    if getattr(args, "memory", None) is not None:
        updates["memory"] = args.memory
    if getattr(args, "adapt", None) is not None:
        updates["adapt"] = replace(cfg.adapt, strategy=args.adapt)
    if getattr(args, "policy", None) is not None:
        updates["policy"] = args.policy
    if getattr(args, "styles", None) is not None:
        updates["styles"] = tuple(args.styles.split(","))
    return replace(cfg, **updates)


def cmd_gen_env(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.nodes is not None:
        spec = EnvSpec(node_count=args.nodes, layout=args.layout,
                       landmark_duplication_rate=args.duplication)
        env = generate_environment(args.seed or 0, spec)
        save_environment(env, out / f"{env.env_id}.json")
        print(out / f"{env.env_id}.json")
        return
    cfg = load_config(args)
    for env in eval_environments(cfg) + train_environments(cfg):
        save_environment(env, out / f"{env.env_id}.json")
        print(out / f"{env.env_id}.json")


def cmd_gen_episodes(args) -> None:
    env = load_environment(args.env)
    count = args.episodes if args.episodes is not None else 600
    persona_name = args.persona or (persona_for(env) if args.style == "user" else None)
    episodes = make_episodes(env, count, style=args.style, persona_name=persona_name,
                             seed=args.seed or 0, dropout=args.dropout)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_episodes(episodes, out, env.spec.landmark_vocab_size)
    print(f"{len(episodes)} episodes -> {out}")


def cmd_train(args) -> None:
    cfg = load_config(args)
    params = resolve_policy(replace(cfg, policy=None, train_strategy=args.strategy or cfg.train_strategy))
    out = Path(cfg.out or "policy.json")
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "policy.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(params.to_json()))
    print(out)


def cmd_run(args) -> None:
    cfg = load_config(args)
    reports = run_experiment(cfg)
    for name, rep in sorted(reports.items()):
        m = rep.metrics
        print(f"{name:<20} SR {100 * m['sr']['mean']:5.1f} ± {100 * m['sr']['stderr']:.1f}  "
              f"SPL {100 * m['spl']['mean']:5.1f}  nDTW {100 * m['ndtw']['mean']:5.1f}")


def cmd_ablate(args) -> None:
    cfg = load_config(args)
    for row in ablate(cfg, args.axis):
        print(f"{row['memory']:<16} SR {100 * row['all:sr']:5.1f} ± {100 * row['all:sr_se']:.1f}")


def cmd_report(args) -> None:
    print(report(args.dir))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenenav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON experiment config; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--repeats", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("gen-env", help="generate environments (the suite, or one with --nodes)")
    common(p, out_required=True)
    p.add_argument("--nodes", type=int)
    p.add_argument("--layout", default="residential-grid", choices=("residential-grid", "nonresidential-hall"))
    p.add_argument("--duplication", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("gen-episodes", help="sample episodes for one environment file")
    common(p, out_required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--style", default="basic", choices=STYLES)
    p.add_argument("--persona")
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_episodes)

    p = sub.add_parser("train", help="train the linear policy on the training suite")
    common(p)
    p.add_argument("--strategy", help="empty-graph, full-graph or buffer:ALPHA")
    p.set_defaults(func=cmd_train)

    for name, func, doc in (("run", cmd_run, "run one experiment"),
                            ("ablate", cmd_ablate, "sweep alpha or proportion")):
        p = sub.add_parser(name, help=doc)
        common(p)
        p.add_argument("--alpha", type=int, help="gr memory with this buffer threshold")
        p.add_argument("--proportion", type=float, help="proportion memory with this fraction")
        p.add_argument("--memory", help="none, gr, gr:ALPHA or proportion:P")
        p.add_argument("--adapt", choices=STRATEGIES)
        p.add_argument("--policy", help="trained policy JSON (default: train from the config)")
        p.add_argument("--styles", help="comma-separated subset of basic,scene,user")
        p.set_defaults(func=func)
    p.add_argument("--axis", required=True, choices=("alpha", "proportion"))

    p = sub.add_parser("report", help="render tables from an experiment directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
