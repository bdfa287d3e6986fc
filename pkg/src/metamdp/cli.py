"""Command-line harness.

Subcommands: train, evaluate, tornado, regress, solve. Each accepts
--config PATH (a JSON file whose keys mirror ExperimentConfig) and/or
direct flags; --preset paper fills the benchmark grids. Exit code is 0 on
success; on failure one machine-parsable line "<category>: <message>" goes
to stderr and the exit code identifies the category.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

from . import bench, exact, optimize as op
from .domains import (
    BanditDomain,
    StoppingDomain,
    TornadoDomain,
    TreeDomain,
)
from .errors import (
    ConfigurationError,
    MetaMdpError,
    MissingArtifactError,
    ResourceLimitError,
)

_EXIT_CODES = {
    "config-error": 2,
    "constraint-error": 2,
    "io-error": 3,
    "missing-artifact": 4,
    "resource-limit": 5,
    "coverage-error": 6,
    "degenerate-design": 2,
    "invalid-action": 2,
    "lifecycle-error": 2,
}


def _fail(category: str, message: str) -> int:
    print(f"{category}: {message}", file=sys.stderr)
    return _EXIT_CODES.get(category, 1)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _single_domain(args):
    if args.domain == "stopping":
        return StoppingDomain(cost=args.cost, horizon=args.horizon or 30)
    if args.domain == "bandit":
        return BanditDomain(k=args.k, cost=args.cost, horizon=args.horizon or 25)
    if args.domain == "tree":
        return TreeDomain(height=args.height, cost=args.cost)
    if args.domain == "tornado":
        return TornadoDomain(k=args.k, budget=args.budget)
    raise ConfigurationError(f"unknown domain {args.domain!r}")


def _resolve_config(args, need_policies: bool = False) -> bench.ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    if getattr(args, "weights", None):
        overrides["weights_dir"] = args.weights
    if getattr(args, "episodes", None):
        overrides["episodes"] = args.episodes
    if getattr(args, "policies", None):
        overrides["policies"] = tuple(args.policies.split(","))
    if getattr(args, "cost", None) is not None:
        overrides["costs"] = (args.cost,)
    if getattr(args, "costs", None):
        overrides["costs"] = _floats(args.costs)
    if getattr(args, "k", None) is not None:
        overrides["ks"] = (args.k,)
    if getattr(args, "height", None) is not None:
        overrides["heights"] = (args.height,)
    if getattr(args, "t_sims", None):
        overrides["t_sims"] = _floats(args.t_sims)
    if getattr(args, "t_mr", None) is not None:
        overrides["t_mr"] = args.t_mr
    if getattr(args, "rollouts", None):
        overrides["rollouts"] = args.rollouts
    if getattr(args, "total_time", None) is not None:
        overrides["total_time"] = args.total_time
    if getattr(args, "budget", None) is not None:
        overrides["tornado_train_budget"] = args.budget
        if args.k is not None:
            overrides["tornado_train_k"] = args.k
    if getattr(args, "train_k", None) is not None:
        overrides["tornado_train_k"] = args.train_k
    if getattr(args, "train_budget", None) is not None:
        overrides["tornado_train_budget"] = args.train_budget

    if args.config:
        cfg = bench.load_config(args.config, {"domain": args.domain, **overrides}
                                if args.domain else overrides)
    elif args.preset == "paper":
        if not args.domain:
            raise ConfigurationError("--preset paper needs --domain")
        cfg = bench.preset_config(args.domain, **overrides)
    else:
        if not args.domain:
            raise ConfigurationError("need --config, or --domain with cell flags")
        cfg = bench.ExperimentConfig(domain=args.domain, **overrides)
    if need_policies and not cfg.policies:
        raise ConfigurationError("no policies selected (use --policies or a config file)")
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    spec = None
    if args.iterations:
        spec = op.SearchSpec(
            iterations=args.iterations,
            episodes_per_eval=args.train_episodes or 1000,
            top_k_rescore=args.top_k or 1,
            rescore_episodes=args.rescore_episodes or 1000,
            seed=cfg.seed,
        )
    written = bench.run_train(cfg, spec)
    for path in written:
        print(path)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args, need_policies=True)
    rows, notes = bench.run_evaluate(cfg)
    out = os.path.join(cfg.out_dir, f"results_{cfg.domain}.csv")
    bench.write_rows(out, rows, meta={"config": asdict(cfg), "config_hash": cfg.hash(),
                                      "notes": notes})
    print(out)
    return 0


def cmd_tornado(args) -> int:
    cfg = _resolve_config(args)
    if cfg.domain != "tornado":
        cfg = replace(cfg, domain="tornado")
    if not cfg.ks or not cfg.t_sims:
        raise ConfigurationError("tornado needs ks and t_sims (use --preset paper)")
    cells, measured = bench.run_tornado(cfg)
    results, budgets = bench.write_tornado_outputs(cells, cfg.out_dir, cfg, measured)
    print(results)
    print(budgets)
    return 0


def cmd_regress(args) -> int:
    costs = _floats(args.costs) if args.costs else bench.PAPER_GRIDS["stopping"]["costs"]
    table, scatter = bench.run_regress(costs, args.out or "results",
                                       scatter_cost=args.scatter_cost,
                                       seed=args.seed or 0)
    print(table)
    print(scatter)
    return 0


def cmd_solve(args) -> int:
    domain = _single_domain(args)
    table, summary = bench.run_solve(domain, args.out or "results",
                                     state_cap=args.cap or exact.DEFAULT_STATE_CAP)
    print(table)
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metamdp",
        description="metalevel-MDP benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policies=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--preset", choices=["paper"], help="fill the benchmark grids")
        p.add_argument("--domain", choices=["stopping", "bandit", "tree", "tornado"])
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--out", help="output directory")
        p.add_argument("--k", type=int)
        p.add_argument("--height", type=int)
        p.add_argument("--cost", type=float)
        p.add_argument("--costs", help="comma-separated cost grid")
        p.add_argument("--budget", type=int)
        p.add_argument("--horizon", type=int, default=0)
        if policies:
            p.add_argument("--policies", help="comma-separated policy names")
            p.add_argument("--episodes", type=int)
            p.add_argument("--weights", help="directory with trained weight records")

    p_train = sub.add_parser("train", help="optimize policy weights per cell")
    common(p_train)
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--train-episodes", type=int, dest="train_episodes")
    p_train.add_argument("--top-k", type=int, dest="top_k")
    p_train.add_argument("--rescore-episodes", type=int, dest="rescore_episodes")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate policies over a grid")
    common(p_eval, policies=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_tor = sub.add_parser("tornado", help="simulation-budget allocation benchmark")
    common(p_tor)
    p_tor.add_argument("--t-sims", dest="t_sims", help="comma-separated simulation durations (hours)")
    p_tor.add_argument("--t-mr", dest="t_mr", type=float,
                       help="pin metareasoning time (hours); default: measure")
    p_tor.add_argument("--rollouts", type=int)
    p_tor.add_argument("--total-time", dest="total_time", type=float)
    p_tor.add_argument("--weights", help="directory with trained weight records")
    p_tor.add_argument("--train-k", dest="train_k", type=int,
                       help="city count of the reused trained record")
    p_tor.add_argument("--train-budget", dest="train_budget", type=int,
                       help="budget of the reused trained record")
    p_tor.set_defaults(func=cmd_tornado)

    p_reg = sub.add_parser("regress", help="regress exact VOC onto the VOI features")
    p_reg.add_argument("--costs", help="comma-separated cost grid")
    p_reg.add_argument("--scatter-cost", dest="scatter_cost", type=float, default=0.02)
    p_reg.add_argument("--out")
    p_reg.add_argument("--seed", type=int)
    p_reg.set_defaults(func=cmd_regress)

    p_solve = sub.add_parser("solve", help="backward induction for one cell")
    p_solve.add_argument("--domain", required=True,
                         choices=["stopping", "bandit", "tree", "tornado"])
    p_solve.add_argument("--k", type=int)
    p_solve.add_argument("--height", type=int)
    p_solve.add_argument("--cost", type=float)
    p_solve.add_argument("--budget", type=int)
    p_solve.add_argument("--horizon", type=int, default=0)
    p_solve.add_argument("--cap", type=int, help="state-count cap")
    p_solve.add_argument("--out")
    p_solve.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MetaMdpError as exc:
        return _fail(exc.category, str(exc))
    except OSError as exc:
        return _fail("io-error", str(exc))
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        return _fail("internal-error", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
