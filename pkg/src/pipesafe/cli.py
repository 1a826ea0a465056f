"""Command line front end.

Subcommands:

* run      solve A x = b for one method and print a JSON summary
* compare  run two methods on the same operator and emit a joined
           per-iteration residual CSV
* bench    time the kernel backends against each other

The right-hand side is always b = A @ ones and the initial guess is
zero, so every run has the same known solution.  Operators come either
from a Matrix Market file or from the built-in generator through
pseudo-paths like gen:poisson2d:30 (a 30 x 30 grid Laplacian).

Every long flag can be defaulted through the environment as
PIPESAFE_<FLAG> with dashes as underscores (PIPESAFE_MAX_ITERS=2000,
PIPESAFE_SOLVER=pbicgsafe, ...); explicit flags win.

Exit codes: 0 converged, 2 iteration cap, 3 breakdown, 4 bad input,
5 non-finite values.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from time import perf_counter

import numpy as np

from . import kernels as kn
from .bench import run_bench
from .instrument import per_iteration_costs, write_costs_json
from .linalg import NonFiniteVectorError, gen_poisson, spmv
from .mmio import MatrixMarketError, load_matrix_market
from .reduction import PartitionPlan, ReductionEngine
from .solvers import METHODS, SolveStatus, SolverConfig, solve, write_history_csv

EXIT_CONVERGED = 0
EXIT_MAX_ITERS = 2
EXIT_BREAKDOWN = 3
EXIT_INPUT = 4
EXIT_NON_FINITE = 5

_STATUS_EXIT = {
    SolveStatus.CONVERGED: EXIT_CONVERGED,
    SolveStatus.MAX_ITERS: EXIT_MAX_ITERS,
    SolveStatus.BREAKDOWN: EXIT_BREAKDOWN,
    SolveStatus.NON_FINITE: EXIT_NON_FINITE,
}

_GEN_RE = re.compile(r"^gen:poisson([123])d:(\d+)$")


class _InputError(Exception):
    """Anything wrong with arguments, files, or operator shape."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags, which collides with the iteration-cap
    # code; route all argument errors to the input-error exit instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INPUT)


def _env_default(flag: str, cast, fallback):
    raw = os.environ.get("PIPESAFE_" + flag.upper().replace("-", "_"))
    if raw is None or raw == "":
        return fallback
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise SystemExit(EXIT_INPUT)


def _bool_env(raw: str) -> bool:
    return raw.strip().lower() not in ("0", "false", "no", "off")


def load_operator(spec: str):
    """Return (matrix, metadata) from a file path or gen: pseudo-path."""
    m = _GEN_RE.match(spec)
    if m:
        try:
            return gen_poisson(int(m.group(1)), int(m.group(2)))
        except ValueError as exc:
            raise _InputError(str(exc)) from exc
    if spec.startswith("gen:"):
        raise _InputError(
            f"unrecognized generator {spec!r}; expected gen:poisson{{1,2,3}}d:<k>"
        )
    if not os.path.exists(spec):
        raise _InputError(f"matrix file not found: {spec}")
    try:
        return load_matrix_market(spec)
    except MatrixMarketError as exc:
        raise _InputError(str(exc)) from exc


def _add_solver_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--matrix", required=True, help=".mtx path or gen:poissonNd:k")
    sub.add_argument(
        "--tol", type=float, default=_env_default("tol", float, 1e-8),
        help="relative residual target (default 1e-8)",
    )
    sub.add_argument(
        "--max-iters", type=int, default=_env_default("max-iters", int, 10_000),
        help="iteration cap (default 10000)",
    )
    sub.add_argument(
        "--rr-epoch", type=int, default=_env_default("rr-epoch", int, 100),
        help="residual replacement period m (default 100)",
    )
    sub.add_argument(
        "--rr-cutoff", type=int, default=_env_default("rr-cutoff", int, None),
        help="stop replacing after this iteration (default: max-iters)",
    )
    sub.add_argument(
        "--workers", type=int, default=_env_default("workers", int, 1),
        help="reduction/product partitions; >1 enables the thread pool",
    )
    sub.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=_env_default("deterministic", _bool_env, True),
        help="combine reduction partials in plan order (reproducible runs)",
    )
    sub.add_argument(
        "--monitor-every", type=int, default=_env_default("monitor-every", int, 0),
        help="compute the true residual every K iterations (0 disables)",
    )


def _build_engine(n: int, args) -> ReductionEngine:
    if args.workers < 1:
        raise _InputError("--workers must be >= 1")
    plan = PartitionPlan.balanced(n, args.workers)
    mode = "threaded" if args.workers > 1 else "inline"
    return ReductionEngine(plan, mode=mode, deterministic=args.deterministic)


def _build_config(args) -> SolverConfig:
    try:
        return SolverConfig(
            tol=args.tol,
            max_iters=args.max_iters,
            rr_epoch=args.rr_epoch,
            rr_cutoff=args.rr_cutoff,
            monitor_every=args.monitor_every,
            deterministic=args.deterministic,
        )
    except ValueError as exc:
        raise _InputError(str(exc)) from exc


def _run_one(A, meta, method: str, args, engine: ReductionEngine):
    config = _build_config(args)
    b = spmv(A, np.ones(A.n_cols))  # exact solution is the ones vector
    t0 = perf_counter()
    outcome = solve(A, b, method=method, config=config, engine=engine)
    wall = perf_counter() - t0
    return outcome, wall, config


def cmd_run(args) -> int:
    A, meta = load_operator(args.matrix)
    engine = _build_engine(A.n_rows, args)
    with engine:
        outcome, wall, config = _run_one(A, meta, args.solver, args, engine)

        artifacts = {}
        if args.history:
            write_history_csv(args.history, outcome.history)
            artifacts["history"] = args.history
        if args.events:
            engine.log.write_jsonl(args.events)
            artifacts["events"] = args.events
        if args.costs:
            try:
                row = per_iteration_costs(outcome.counters, args.solver)
            except ValueError:
                row = None  # too few iterations for a steady-state read
            write_costs_json(args.costs, row, outcome.counters, outcome.drift)
            artifacts["costs"] = args.costs

    summary = {
        "solver": args.solver,
        "matrix": meta.as_dict(),
        "status": outcome.status.value,
        "exit_code": _STATUS_EXIT[outcome.status],
        "iterations": outcome.iterations,
        "r0_norm": outcome.r0_norm,
        "final_rel_res_recur": outcome.final_rel_res_recur,
        "best_rel_res_recur": outcome.best_rel_res_recur,
        "breakdown_quantity": outcome.breakdown_quantity,
        "failure_iter": outcome.failure_iter,
        "tol": config.tol,
        "max_iters": config.max_iters,
        "rr_epoch": config.rr_epoch,
        "rr_cutoff": config.rr_cutoff,
        "workers": args.workers,
        "deterministic": args.deterministic,
        "backend": kn.active_backend(),
        "wall_time_s": wall,
        "counters": outcome.counters.as_dict(),
        "artifacts": artifacts,
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return _STATUS_EXIT[outcome.status]


def cmd_compare(args) -> int:
    if args.against == args.solver:
        raise _InputError("compare needs two different solvers")
    A, meta = load_operator(args.matrix)

    outcomes = {}
    walls = {}
    for method in (args.solver, args.against):
        engine = _build_engine(A.n_rows, args)
        with engine:
            outcome, wall, config = _run_one(A, meta, method, args, engine)
        outcomes[method] = outcome
        walls[method] = wall

    hist_a = {rec.iter: rec.rel_res_recur for rec in outcomes[args.solver].history}
    hist_b = {rec.iter: rec.rel_res_recur for rec in outcomes[args.against].history}
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("iter,rel_res_a,rel_res_b,abs_log10_ratio\n")
        for it in sorted(hist_a.keys() | hist_b.keys()):
            ra, rb = hist_a.get(it), hist_b.get(it)
            sa = "" if ra is None else format(ra, ".17g")
            sb = "" if rb is None else format(rb, ".17g")
            if ra and rb:
                ratio = format(abs(np.log10(ra / rb)), ".17g")
            else:
                ratio = ""
            fh.write(f"{it},{sa},{sb},{ratio}\n")

    summary = {
        "matrix": meta.as_dict(),
        "out": args.out,
        "solver_a": args.solver,
        "solver_b": args.against,
        "runs": {
            method: {
                "status": outcomes[method].status.value,
                "iterations": outcomes[method].iterations,
                "final_rel_res_recur": outcomes[method].final_rel_res_recur,
                "wall_time_s": walls[method],
            }
            for method in (args.solver, args.against)
        },
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    worst = max(_STATUS_EXIT[outcomes[m].status] for m in outcomes)
    return worst


def cmd_bench(args) -> int:
    if args.size < 2:
        raise _InputError("--size must be >= 2")
    if args.repeats < 1:
        raise _InputError("--repeats must be >= 1")
    report = run_bench(size=args.size, repeats=args.repeats)
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pipesafe", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve one system and print a JSON summary")
    _add_solver_flags(p_run)
    p_run.add_argument(
        "--solver",
        choices=sorted(METHODS),
        default=_env_default("solver", str, "pbicgsafe"),
        help="method to run (default pbicgsafe)",
    )
    p_run.add_argument("--history", help="write per-iteration residual CSV here")
    p_run.add_argument("--events", help="write the engine event log (JSONL) here")
    p_run.add_argument("--costs", help="write measured per-iteration costs JSON here")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="run two solvers, join their histories")
    _add_solver_flags(p_cmp)
    p_cmp.add_argument(
        "--solver",
        choices=sorted(METHODS),
        default=_env_default("solver", str, "ssbicgsafe2"),
        help="first method (column rel_res_a)",
    )
    p_cmp.add_argument(
        "--against",
        choices=sorted(METHODS),
        default=_env_default("against", str, "pbicgsafe"),
        help="second method (column rel_res_b)",
    )
    p_cmp.add_argument("--out", required=True, help="joined residual CSV path")
    p_cmp.set_defaults(fn=cmd_compare)

    p_bench = sub.add_parser("bench", help="compare kernel backends")
    p_bench.add_argument(
        "--size", type=int, default=_env_default("size", int, 200),
        help="grid edge for the benchmark operator (default 200)",
    )
    p_bench.add_argument(
        "--repeats", type=int, default=_env_default("repeats", int, 9),
        help="timing samples per op (default 9)",
    )
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NonFiniteVectorError as exc:
        sys.stderr.write(f"pipesafe: error: {exc}\n")
        return EXIT_NON_FINITE
    except (_InputError, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"pipesafe: error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
