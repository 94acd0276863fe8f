"""Command-line interface: oracle, sweep, target, report.

Exit codes: 0 success, 2 experiment-document validation error, 3 when a
sweep produced no successful rows.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DriftRankError, SpecValidationError
from .harness import (
    ResultTable,
    build_seed_context,
    load_experiment_spec,
    run_oracle,
    run_sweep,
    seed_variance_target,
)
from .traces import write_traces

EXIT_OK = 0
EXIT_SPEC_ERROR = 2
EXIT_ALL_FAILED = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", required=True, help="experiment document (JSON)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seeds", default=None, help="comma-separated seed override")
    parser.add_argument("--jobs", type=int, default=1, help="parallel training workers")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")


def _parse_seeds(arg: str | None, spec) -> tuple[int, ...]:
    if arg is None:
        return spec.seeds
    return tuple(int(s) for s in arg.split(",") if s.strip() != "")


def _cmd_oracle(args) -> int:
    spec = load_experiment_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "cache"
    for seed in _parse_seeds(args.seeds, spec):
        ctx = build_seed_context(spec, seed)
        oracle = run_oracle(spec, seed, ctx=ctx, cache_dir=cache, jobs=args.jobs)
        write_traces(
            out / f"oracle_traces_seed{seed}.csv",
            [oracle.archive.traces[c] for c in oracle.archive.configs],
        )
        doc = {
            "seed": seed,
            "metrics": {str(c): oracle.truth.metrics[c] for c in oracle.archive.configs},
            "ranking": list(oracle.truth.ranking),
            "reference_mean": oracle.reference_mean,
            "diverged": sorted(oracle.archive.diverged),
        }
        path = out / f"oracle_seed{seed}.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=1))
        best = oracle.truth.ranking[0]
        print(f"seed {seed}: best config {best} "
              f"(metric {oracle.truth.metrics[best]:.6f}); wrote {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = load_experiment_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = run_sweep(
        spec,
        seeds=_parse_seeds(args.seeds, spec),
        cache_dir=out / "cache",
        jobs=args.jobs,
    )
    path = out / f"results.{args.format}"
    table.write(path, fmt=args.format)
    ok = len(table.ok_rows())
    print(f"wrote {path} ({ok}/{len(table.rows)} rows ok)")
    if table.rows and ok == 0:
        return EXIT_ALL_FAILED
    return EXIT_OK


def _cmd_target(args) -> int:
    spec = load_experiment_spec(args.spec)
    value = seed_variance_target(spec, args.n_seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "target.json"
    path.write_text(json.dumps({"n_seeds": args.n_seeds, "target_percent": value}, sort_keys=True, indent=1))
    print(f"seed-variance target: {value:.6f}% (over {args.n_seeds} seeds); wrote {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    results = Path(args.results) if args.results else Path(args.out) / "results.csv"
    table = ResultTable.read_csv(results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        path = out / "report.csv"
        path.write_text(table.aggregate_csv())
    else:
        path = out / "report.json"
        path.write_text(json.dumps(table.aggregate(), sort_keys=True, indent=1))
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="driftrank",
        description="Cost-efficient hyperparameter ranking on non-stationary streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_oracle = sub.add_parser("oracle", help="train all configs fully; ground truth")
    _add_common(p_oracle)
    p_oracle.set_defaults(func=_cmd_oracle)

    p_sweep = sub.add_parser("sweep", help="run data-reduction strategy sweeps")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_target = sub.add_parser("target", help="seed-variance regret target")
    _add_common(p_target)
    p_target.add_argument("--n-seeds", type=int, default=8)
    p_target.set_defaults(func=_cmd_target)

    p_report = sub.add_parser("report", help="aggregate sweep results for plotting")
    _add_common(p_report)
    p_report.add_argument("--results", default=None, help="results.csv path")
    p_report.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecValidationError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except DriftRankError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
