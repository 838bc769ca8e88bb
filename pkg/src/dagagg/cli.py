"""Command-line entry point: run, run-lowerbound, verify, coverage, inspect.

Exit codes: 0 success, 1 a check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .diagnostics import format_table
from .experiments import (ConfigError, ExperimentConfig, load_dataset, run_experiment,
                          run_lowerbound_figure, train_trial)
from .suites import SUITES, hub_barrier, lowerbound_suite
from .topology import (build_chain, build_random_tree, coverage_window_check, load_graph,
                       longest_path, minimal_covering_window, random_feature_assignment,
                       required_window)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config)
    overrides = {"seed": args.seed, "trials": args.trials, "out": args.out, "workers": args.workers}
    doc = cfg.to_dict()
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.p is not None:
        doc["assignment"] = dict(doc["assignment"], p=args.p)
    if args.learner is not None:
        doc["learner"] = {"kind": args.learner}
        if args.delta is not None:
            doc["learner"]["delta"] = args.delta
    return ExperimentConfig.from_dict(doc, Path(args.config).parent)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg)
    out = Path(cfg.out or Path("results") / cfg.name)
    for path in result.write(out):
        print(f"wrote {path}")
    final = result.final_position()
    print(f"baseline test MSE {result.baseline_test:.6g}; "
          f"final position {final.group_value} mean test MSE {final.mean_test_mse:.6g}")
    beating = [r.group_value for r in result.aggregates["position"] if r.beats_baseline]
    if beating:
        print(f"positions beating the baseline: {beating}")
    return EXIT_OK


def cmd_run_lowerbound(args) -> int:
    if args.k < 2 or args.passes < 1:
        print("error: need --k >= 2 and --passes >= 1", file=sys.stderr)
        return EXIT_CONFIG
    res = run_lowerbound_figure(args.k, args.passes, args.samples, args.seed)
    text = res.to_csv()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "lowerbound_trace.csv").write_text(text)
        summary = {"k": res.k, "passes": res.passes, "mode": res.mode, "samples": args.samples,
                   "seed": args.seed, "fit": res.fit, "version": __version__}
        (out / "lowerbound_fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out / 'lowerbound_trace.csv'} and {out / 'lowerbound_fit.json'}")
    else:
        sys.stdout.write(text)
    if res.fit:
        print(f"fit: alpha={res.fit['alpha']:.4f} (sse {res.fit['sse_alpha']:.3g}), "
              f"beta={res.fit['beta']:.4f} (sse {res.fit['sse_beta']:.3g}); "
              f"better: {res.fit['better_fit']}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    failed, dump = [], {}
    for name in names:
        if name == "lowerbound":
            if args.k < 3:
                print("error: --k must be at least 3", file=sys.stderr)
                return EXIT_CONFIG
            reports = lowerbound_suite(args.k) + [hub_barrier()]
        else:
            reports = SUITES[name]()
        print(f"== {name}")
        shown = reports if name != "bounds" else _summarize_bounds(reports)
        print(format_table(shown))
        failed += [f"{name}:{r.name}" for r in reports if not r.passed]
        dump[name] = [r.to_dict() for r in reports]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.json").write_text(json.dumps(dump, indent=2, default=float) + "\n")
    if failed:
        print("FAILED: " + ", ".join(sorted(set(failed))))
        return EXIT_CHECK
    print("all checks passed")
    return EXIT_OK


def _summarize_bounds(reports):
    """Worst-slack report per bound name."""
    worst = {}
    for r in reports:
        if r.name not in worst or (r.passed, r.slack) < (worst[r.name].passed, worst[r.name].slack):
            worst[r.name] = r
    return list(worst.values())


def cmd_coverage(args) -> int:
    if args.graph:
        try:
            dag, assignment = load_graph(Path(args.graph).read_text())
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read graph file: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if assignment is None:
            print("error: graph file has no assignment", file=sys.stderr)
            return EXIT_CONFIG
    else:
        if args.d is None or args.p is None:
            print("error: give --graph, or --n, --d and --p", file=sys.stderr)
            return EXIT_CONFIG
        dag = build_chain(args.n) if args.topology == "chain" else build_random_tree(args.n, args.topology, args.seed)
        assignment = random_feature_assignment(dag, args.d, args.p, args.seed)
    path = longest_path(dag)
    window = args.window
    if window is None:
        p = args.p if args.p is not None else sum(len(s) for s in assignment.sets) / (assignment.d * dag.node_count)
        window = min(required_window(len(path), assignment.d, p, args.delta), len(path))
        print(f"required window from the coverage formula: {window}")
    report = coverage_window_check(assignment, path, window, args.stride or 1)
    print(json.dumps(dict(report.to_dict(), path_length=len(path),
                          minimal_window=minimal_covering_window(assignment, path)), indent=2))
    return EXIT_OK if report.covered else EXIT_CHECK


def cmd_inspect(args) -> int:
    cfg = _load_config(args)
    trained, _, _ = train_trial(cfg, load_dataset(cfg), args.trial)
    text = json.dumps(trained.to_dict(), indent=2, default=float) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--out", help="override the output location")
    p.add_argument("--workers", type=int, help="process pool size")
    p.add_argument("--p", type=float, help="override the feature fraction")
    p.add_argument("--learner", choices=["linear", "greedy"])
    p.add_argument("--delta", type=float, help="greedy stopping threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagagg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="multi-trial experiment from a JSON config")
    _config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("run-lowerbound", help="error trace of the cyclic lower-bound chain")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--passes", type=int, default=9)
    p.add_argument("--samples", type=int, help="sample size; exact population run if omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, help="accepted for uniformity; the trace is a single run")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run_lowerbound)

    p = sub.add_parser("verify", help="run invariant suites")
    p.add_argument("suite", nargs="?", default="all", choices=["all", *SUITES])
    p.add_argument("--k", type=int, default=10, help="k for the lowerbound suite")
    p.add_argument("--seed", type=int, help="accepted for uniformity; suites are fixed")
    p.add_argument("--trials", type=int, help="accepted for uniformity; suites are fixed")
    p.add_argument("--out", help="directory for verify_report.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("coverage", help="audit coverage windows along the longest path")
    p.add_argument("--graph", help="JSON file with dag and assignment")
    p.add_argument("--topology", default="chain", choices=["chain", "top_down", "bottom_up"])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int, help="1 for every window, window size for disjoint blocks")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, help="accepted for uniformity")
    p.add_argument("--out", help="accepted for uniformity")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("inspect", help="dump one trained trial as JSON")
    _config_flags(p)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
