"""Command-line entry point.

Subcommands: gen-synthetic, run, sweep, ablate, linkpred, account,
grad-check. Global flags: --config <path>, --seed <int>, --out <dir>.
Without --config, the default synthetic experiment is used.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import gradsuite, pipeline


def _load_config(args) -> pipeline.ExperimentConfig:
    if args.config:
        cfg = pipeline.ExperimentConfig.load(args.config)
    else:
        cfg = pipeline.default_synthetic_config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tagbridge",
                                     description="Token-reduced text-attributed-graph experiments")
    parser.add_argument("--config", help="JSON experiment config (default: built-in synthetic)")
    parser.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    parser.add_argument("--out", default="runs", help="output directory (default: runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-synthetic", help="write the synthetic graph to nodes.jsonl/edges.txt")
    sub.add_parser("run", help="full pipeline run")

    p_sweep = sub.add_parser("sweep", help="one run per value of a hyperparameter")
    p_sweep.add_argument("--param", choices=sorted(pipeline.SWEEP_PARAMS), required=True)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values, e.g. 4,8,16")

    p_ablate = sub.add_parser("ablate", help="compare all reducers across seeds")
    p_ablate.add_argument("--seeds", default="0", help="comma-separated seeds")

    p_link = sub.add_parser("linkpred", help="link-prediction AUC across seeds")
    p_link.add_argument("--seeds", default="0", help="comma-separated seeds")

    p_acc = sub.add_parser("account", help="token accounting (no training)")
    p_acc.add_argument("--steps", default=None,
                       help="comma-separated walk-step values (default: config value)")

    p_grad = sub.add_parser("grad-check", help="finite-difference checks on all models")
    p_grad.add_argument("--fixtures", type=int, default=5)

    args = parser.parse_args(argv)
    cfg = _load_config(args)

    if args.command == "gen-synthetic":
        report = pipeline.cmd_gen_synthetic(cfg, args.out)
        print(json.dumps(report, indent=2))
    elif args.command == "run":
        report = pipeline.cmd_run(cfg, args.out)
        print(json.dumps(pipeline.strip_timings(report)["metrics"], indent=2))
        print(f"report written to {args.out}/metrics.json")
    elif args.command == "sweep":
        values_raw = args.values.split(",")
        values = [int(v) if args.param == "walk-steps" else float(v) for v in values_raw]
        table = pipeline.cmd_sweep(cfg, args.param, values, args.out)
        for row in table["rows"]:
            rep = row["report"]
            line = f"{args.param}={row['value']}: metrics={rep['metrics']}"
            if rep["stages"]["reducer"]["mean_max_score"] is not None:
                line += f" mean_max_score={rep['stages']['reducer']['mean_max_score']:.4f}"
            print(line)
    elif args.command == "ablate":
        table = pipeline.cmd_ablate(cfg, _int_list(args.seeds), args.out)
        for row in table["rows"]:
            print(f"{row['reducer']:10s} test acc {row['mean']:.4f} +- {row['std']:.4f}  {row['test_accs']}")
    elif args.command == "linkpred":
        table = pipeline.cmd_linkpred(cfg, _int_list(args.seeds), args.out)
        for row in table["rows"]:
            print(f"seed {row['seed']}: AUC {row['auc']}")
        print(f"test AUC {table['test_mean']:.4f} +- {table['test_std']:.4f}")
    elif args.command == "account":
        steps = _int_list(args.steps) if args.steps else None
        report = pipeline.cmd_account(cfg, steps, args.out)
        for row in report["rows"]:
            print(f"steps={row['walk_steps']:3d} reduced={row['reduced_total']:8d} "
                  f"unreduced={row['unreduced_total']:8d} ratio={row['ratio']:.4f} "
                  f"bound={row['budget_bound']}")
    elif args.command == "grad-check":
        results = gradsuite.run_suite(n_fixtures=args.fixtures, seed=cfg.seed)
        print(gradsuite.suite_summary(results))
        if not all(r.passed for reps in results.values() for r in reps):
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
