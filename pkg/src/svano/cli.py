"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict

import numpy as np

from . import bench
from .harness import ALGORITHMS, ConfigError, Exit, FrameworkParams, Limits, diagnostics_report, run
from .problems import (
    NAMES,
    REFERENCE_F0_50,
    ProblemError,
    finite_difference_check,
    get_problem,
    matches_reference,
    sample_differentiable,
)
from .strategies import RadiusPolicy, SamplingConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved for run failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="svano", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="minimize one test problem")
    solve.add_argument("--problem", required=True, help="problem name (see 'problems list')")
    solve.add_argument("--n", type=int, default=50)
    solve.add_argument("--algorithm", choices=ALGORITHMS, default="bundle")
    solve.add_argument("--alpha", type=float, default=1e-15)
    solve.add_argument("--eta", type=float, default=1e-12)
    solve.add_argument("--theta", type=float, default=20.0, help="use 'inf' to drop the bound")
    solve.add_argument("--r", type=float, default=1e-15)
    solve.add_argument("--delta1", type=float, default=0.1)
    solve.add_argument("--tau", type=float, default=0.5)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--max-iter", type=int, default=10_000)
    solve.add_argument("--sample-count", type=int, help="new gradient samples per gs iteration "
                       "(default 2n)")
    solve.add_argument("--wall-clock", type=float, default=600.0)
    solve.add_argument("--trace", action="store_true", help="record per-iteration diagnostics")
    solve.add_argument("--output", help="write the JSON record here")

    b = sub.add_parser("bench", help="run a benchmark sweep from a config file")
    b.add_argument("--config", required=True)
    b.add_argument("--ablate-theta", action="store_true", help="run with theta = inf")
    b.add_argument("--trials", type=int, help="override the config's trials")
    b.add_argument("--workers", type=int)
    b.add_argument("--csv", help="override the CSV output path")
    b.add_argument("--json", help="override the JSON output path")

    probs = sub.add_parser("problems", help="problem registry")
    probs.add_argument("action", choices=["list"])
    probs.add_argument("--n", type=int, default=50)

    v = sub.add_parser("validate-oracles", help="check oracles against reference data")
    v.add_argument("--points", type=int, default=100, help="random points per problem")
    v.add_argument("--seed", type=int, default=0)
    return parser


def _solve(args) -> int:
    try:
        params = FrameworkParams(alpha=args.alpha, eta=args.eta, theta=args.theta, r=args.r)
        policy = RadiusPolicy(delta=args.delta1, tau=args.tau)
        limits = Limits(max_iter=args.max_iter, wall_clock=args.wall_clock)
        sampling = SamplingConfig(sample_count=args.sample_count, rng_seed=args.seed)
        problem = get_problem(args.problem, args.n)
    except (ConfigError, ProblemError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rec = run(problem, args.algorithm, params=params, policy=policy, limits=limits,
              seed=args.seed, trace=args.trace, sampling=sampling)
    print(bench.to_csv([rec]), end="")
    doc = rec.to_json(with_trace=args.trace)
    if args.trace:
        doc["diagnostics"] = asdict(diagnostics_report(rec))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(bench.finite_json(doc), fh, indent=2, allow_nan=False)
    if rec.exit is Exit.FAILURE:
        print(f"run failed: {rec.message}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def _bench(args) -> int:
    try:
        cfg = bench.load_config(args.config)
        if args.ablate_theta:
            cfg.theta = math.inf
        if args.trials is not None:
            cfg.trials = args.trials
        cfg.csv = args.csv or cfg.csv
        cfg.json = args.json or cfg.json
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    records = bench.benchmark(cfg, workers=args.workers)
    table = bench.to_csv(records)
    print(table, end="")
    if cfg.csv:
        with open(cfg.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(table)
    if cfg.json:
        with open(cfg.json, "w", encoding="utf-8") as fh:
            fh.write(bench.to_json(records, cfg))
    return EXIT_OK


def _problems(args) -> int:
    for name in NAMES:
        spec = get_problem(name, args.n)
        f0 = spec.evaluate(spec.starting_point())
        fstar = "unknown" if spec.f_star is None else f"{spec.f_star:.6g}"
        kind = "convex" if spec.convex else "nonconvex"
        print(f"{name:20s} {kind:10s} f(x0)={f0:<12.6g} f*={fstar}")
    return EXIT_OK


def _validate(args) -> int:
    ok = True
    rng = np.random.default_rng(args.seed)
    for name in NAMES:
        spec = get_problem(name, 50)
        f0 = spec.evaluate(spec.starting_point())
        ref = REFERENCE_F0_50[name]
        worst = max(finite_difference_check(spec, sample_differentiable(spec, rng), rng=rng)
                    for _ in range(args.points))
        good = matches_reference(f0, ref) and worst <= 1e-5
        ok &= good
        print(f"{'ok  ' if good else 'FAIL'} {name:20s} f(x0)={f0:.4f} ref={ref} fd_err={worst:.2e}")
    return EXIT_OK if ok else EXIT_RUN


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"solve": _solve, "bench": _bench, "problems": _problems,
               "validate-oracles": _validate}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
