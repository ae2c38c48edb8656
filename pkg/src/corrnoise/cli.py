"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure
(non-convergence or an indefinite solution).  Machine-readable output goes to
stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__, descriptor
from .dpsgd import SyntheticProblem, monte_carlo
from .errors import CorrNoiseError, IndefiniteSolutionError
from .loss import evaluate_loss
from .noisegen import NoiseSource, make_generator, materialized_noise
from .optimize import (
    OptimizerConfig,
    optimize_banded_toeplitz,
    optimize_blt,
    optimize_dense_multi,
)
from .privacy import PrivacyTarget, calibrate_nu
from .sensitivity import (
    GramMatrix,
    ParticipationSchema,
    sensitivity_upper_bound,
    strategy_sensitivity,
)
from .strategies import materialize_strategy
from .tables import COLUMNS, DENSE_RMS_LIMIT, TABLES, UNSUPPORTED, table_rows
from .workloads import WorkloadSpec

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(CorrNoiseError):
    pass


def _schema(text: str) -> ParticipationSchema:
    try:
        return ParticipationSchema.parse(text)
    except CorrNoiseError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _workload(args, n: int) -> WorkloadSpec:
    if args.workload == "momentum":
        return WorkloadSpec.momentum(n, args.beta, args.weight_decay)
    return WorkloadSpec.prefix(n)


def _add_workload_flags(p):
    p.add_argument("--workload", choices=("prefix", "momentum"), default="prefix")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--weight-decay", type=float, default=0.0)


def _adjacency(text: str) -> str:
    return text.replace("-", "_")


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


# commands ------------------------------------------------------------

def cmd_optimize(args) -> int:
    n = args.steps
    workload = _workload(args, n)
    config = OptimizerConfig(max_iterations=args.max_iterations, seed=args.seed)
    schema = args.schema
    if args.strategy == "dense":
        if args.loss != "rms":
            raise UsageError("the dense optimizer supports --loss rms only")
        result = optimize_dense_multi(workload, n, schema, config)
    elif args.strategy == "banded-toeplitz":
        bands = args.bands or n
        result = optimize_banded_toeplitz(workload, n, bands, schema, config, args.loss)
    else:
        result = optimize_blt(workload, n, args.buffers, schema, config, args.loss)
    report = evaluate_loss(workload, result.strategy, schema)
    metadata = {
        "workload": workload.to_dict(),
        "schema": str(schema),
        "objective": args.loss,
        "objective_value": result.objective,
        "converged": result.converged,
        "iterations": result.iterations,
        "losses": report.to_dict(),
        "sensitivity": report.sensitivity,
        "tool_version": __version__,
    }
    descriptor.write(args.out, result.strategy, metadata)
    print(f"objective {result.objective:.6f} after {result.iterations} iterations", file=sys.stderr)
    if not result.converged:
        print("optimizer did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _report(args):
    strategy, _ = descriptor.read(args.mechanism)
    workload = _workload(args, strategy.n)
    report = evaluate_loss(workload, strategy, args.schema)
    if args.mu is not None:
        report.calibrated_nu = calibrate_nu(
            report.sensitivity, PrivacyTarget(args.mu, _adjacency(args.adjacency))
        )
    return strategy, report


def _oracle(strategy, schema) -> float:
    C = materialize_strategy(strategy)
    if strategy.kind == "tree":
        C = C[1]
    return sensitivity_upper_bound(GramMatrix.of(C), schema)


def cmd_evaluate(args) -> int:
    strategy, report = _report(args)
    out = report.to_dict()
    if args.oracle == "brute":
        out["oracle_sensitivity"] = _oracle(strategy, args.schema)
    _emit_json(out)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    strategy, _ = descriptor.read(args.mechanism)
    res = strategy_sensitivity(strategy, args.schema)
    out = {"sensitivity": res.value, "exact": res.exact, "method": res.method,
           "schema": str(args.schema)}
    if args.mu is not None:
        out["calibrated_nu"] = calibrate_nu(res.value, PrivacyTarget(args.mu, _adjacency(args.adjacency)))
    if args.oracle == "brute":
        out["oracle_sensitivity"] = _oracle(strategy, args.schema)
    _emit_json(out)
    return EXIT_OK


def cmd_noise(args) -> int:
    strategy, _ = descriptor.read(args.mechanism)
    if args.steps > strategy.n:
        raise UsageError(f"--steps {args.steps} exceeds the mechanism's {strategy.n} steps")
    source = NoiseSource(args.seed, args.nu, args.dim)
    if args.route == "dense":
        rows = materialized_noise(strategy, source, args.steps)
    else:
        gen = make_generator(strategy, source)
        rows = np.stack([gen.next() for _ in range(args.steps)])
    out = open(args.out, "wb") if args.out else sys.stdout.buffer
    try:
        if args.format == "f64le":
            out.write(rows.astype("<f8").tobytes())
        else:
            text = io.StringIO()
            writer = csv.writer(text, lineterminator="\n")
            for r in rows:
                writer.writerow([repr(float(v)) for v in r])
            out.write(text.getvalue().encode())
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_table(args) -> int:
    columns = []
    for col in args.columns:
        if col in UNSUPPORTED:
            print(f"column {col!r} omitted: {UNSUPPORTED[col]}", file=sys.stderr)
        elif col not in COLUMNS:
            raise UsageError(f"unknown column {col!r}")
        else:
            columns.append(col)
    rows = table_rows(args.name, args.steps, columns, args.dense_limit)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["n"] + columns)
    for row in rows:
        writer.writerow([row["n"]] + ["-" if row[c] is None else f"{row[c]:.3f}" for c in columns])
    return EXIT_OK


def cmd_simulate(args) -> int:
    strategy, _ = descriptor.read(args.mechanism)
    if args.problem == "constant2d":
        problem = SyntheticProblem("constant2d", num_examples=max(args.batch * args.steps, 1))
    else:
        m = args.dim
        problem = SyntheticProblem(
            "linreg", eigenvalues=tuple(np.geomspace(1.0, 0.1, m)), theta_star=tuple(np.ones(m)),
            num_examples=max(args.batch * args.steps, 1),
        )
    summary = monte_carlo(
        problem, strategy, args.schema, args.seeds, eta=args.eta, zeta=args.clip,
        batch=args.batch, steps=args.steps, mu=args.mu,
    )
    per_step = summary.pop("mean_sq_prefix_error")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "mean_sq_prefix_error"])
            for t, v in enumerate(per_step):
                writer.writerow([t, repr(v)])
    summary.update(problem=args.problem, mu=args.mu, steps=args.steps)
    _emit_json(summary)
    return EXIT_OK


# parser --------------------------------------------------------------

def _mu(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("mu must be positive")
    return value


def _int_list(text: str):
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrnoise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="optimize a mechanism and write its descriptor")
    p.add_argument("--strategy", choices=("dense", "banded-toeplitz", "blt"), required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--loss", choices=("max", "rms"), default="max")
    p.add_argument("--schema", type=_schema, default=ParticipationSchema.single())
    p.add_argument("--bands", type=int)
    p.add_argument("--buffers", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--out", required=True)
    _add_workload_flags(p)
    p.set_defaults(func=cmd_optimize)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "loss report of a mechanism"),
        ("sensitivity", cmd_sensitivity, "sensitivity of a mechanism"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--mechanism", required=True)
        p.add_argument("--schema", type=_schema, default=ParticipationSchema.single())
        p.add_argument("--loss", choices=("max", "rms", "both"), default="both")
        p.add_argument("--mu", type=_mu)
        p.add_argument("--adjacency", choices=("zero-out", "replace-one"), default="zero-out")
        p.add_argument("--oracle", choices=("none", "brute"), default="none")
        _add_workload_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("noise", help="generate correlated noise rows")
    p.add_argument("--mechanism", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "f64le"), default="csv")
    p.add_argument("--route", choices=("stream", "dense"), default="stream")
    p.add_argument("--out")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("table", help="max-error / RMSE comparison table as CSV")
    p.add_argument("--name", choices=TABLES, required=True)
    p.add_argument("--steps", type=_int_list, default=[8, 16, 32, 64, 128, 256, 512, 1024])
    p.add_argument("--columns", type=lambda s: [c.strip() for c in s.split(",")], default=list(COLUMNS))
    p.add_argument("--dense-limit", type=int, default=DENSE_RMS_LIMIT,
                   help="largest n for the (slow) dense column")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("simulate", help="Monte-Carlo DP-SGD run report")
    p.add_argument("--problem", choices=("constant2d", "linreg"), default="constant2d")
    p.add_argument("--mechanism", required=True)
    p.add_argument("--schema", type=_schema, default=ParticipationSchema.single())
    p.add_argument("--mu", type=_mu, default=1.0)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IndefiniteSolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CorrNoiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
