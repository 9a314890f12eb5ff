"""Command line entry point: ``treemh <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 sampler invariant
violated.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from .diagnostics import (
    DiagnosticsError,
    autocorrelation,
    convergence_check,
    discard_burn_in,
    group_frequency_table,
    group_models,
    rescale_iterations,
)
from .experiment import ConfigError, RunManifest, parse_config, run_experiment, verify_appendix
from .markov_mesh import ImageFormatError, ModelError
from .sampler_fixed import IrrecoverableStateError
from .sampler_rj import InvariantViolationError
from .traces import TraceFormatError, read_trace_csv
from .tree_graph import InvalidGraphError, InvalidParameterError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

_DATA_ERRORS = (ConfigError, DiagnosticsError, TraceFormatError, ImageFormatError, ModelError,
                InvalidGraphError, InvalidParameterError, FileNotFoundError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load(path: str, burn_in: int):
    t = read_trace_csv(path)
    return discard_burn_in(t, burn_in) if burn_in else t


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    m = run_experiment(cfg, args.workers)
    print(f"{len(m.chains)} chains x {m.iterations} iterations on n={m.n_vertices} "
          f"({m.proposals_per_iteration} proposals/iteration), "
          f"{m.seconds_per_iteration:.4g} s/iteration; traces in {cfg.resolve(cfg.output)}")
    return EXIT_OK


def cmd_acf(args) -> int:
    t = _load(args.trace, args.burn_in)
    rho = autocorrelation([float(v) for v in t.column(args.column)], args.max_lag)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lag", "rho"])
    for lag, r in enumerate(rho):
        w.writerow([lag, repr(float(r))])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_groups(args) -> int:
    runs = [_load(p, args.burn_in).model_ids for p in args.traces]
    gt = group_models(runs, args.eta)
    table = group_frequency_table(gt, args.top)
    _emit(table.csv() if args.csv else table.text(), args.output)
    report = convergence_check(gt, args.eta, args.max_spread)
    verdict = "converged" if report.converged else "NOT converged"
    print(f"# {len(gt.groups)} groups; groups with pooled probability >= {args.eta}: "
          f"{[g + 1 for g in report.checked_groups]}; {verdict}", file=sys.stderr)
    return EXIT_OK


def _measured_ratio(a: str, b: str) -> float:
    ma = RunManifest.from_json(Path(a).read_text())
    mb = RunManifest.from_json(Path(b).read_text())
    if mb.seconds_per_iteration <= 0:
        raise ConfigError("manifest for trace B has no timing")
    return ma.seconds_per_iteration / mb.seconds_per_iteration


def cmd_compare(args) -> int:
    if (args.ratio is None) == (args.manifests is None):
        raise UsageError("give exactly one of --ratio or --manifests")
    ratio = args.ratio if args.ratio is not None else _measured_ratio(*args.manifests)
    a, b = read_trace_csv(args.trace_a), read_trace_csv(args.trace_b)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace", "time", args.column])
    for it, v in zip(a.iterations, a.column(args.column)):
        w.writerow(["A", it, v])
    for t, v in zip(rescale_iterations(b.iterations, ratio), b.column(args.column)):
        w.writerow(["B", repr(t) if t != int(t) else int(t), v])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = parse_config(args.config)
    if args.iterations is not None:
        cfg.iterations = args.iterations
    rep = verify_appendix(cfg, args.tol)
    status = "PASS" if rep.passed else "FAIL"
    print(f"{status}: max |A - 1| = {rep.max_abs_A_minus_1:.3e} over {rep.k_updates} k-updates "
          f"({rep.seconds:.1f} s)")
    return EXIT_OK if rep.passed else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treemh", description="Tree-structured multiple-try MCMC samplers")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run the chains described by a config file")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $TREEMH_WORKERS or 1)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("acf", help="autocorrelation of one trace column, as lag,rho CSV")
    a.add_argument("trace")
    a.add_argument("--max-lag", type=int, required=True)
    a.add_argument("--column", default="log_target")
    a.add_argument("--burn-in", type=int, default=0)
    a.add_argument("-o", "--output")
    a.set_defaults(func=cmd_acf)

    g = sub.add_parser("groups", help="group visited models and tabulate per-run frequencies")
    g.add_argument("traces", nargs="+")
    g.add_argument("--eta", type=float, default=0.3)
    g.add_argument("--top", type=int, default=6)
    g.add_argument("--burn-in", type=int, default=0)
    g.add_argument("--max-spread", type=float, default=0.1)
    g.add_argument("--csv", action="store_true", help="CSV instead of aligned text")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_groups)

    c = sub.add_parser("compare", help="overlay two traces on a cost-normalized axis")
    c.add_argument("trace_a")
    c.add_argument("trace_b")
    c.add_argument("--ratio", type=float, help="divide trace B's iteration numbers by this")
    c.add_argument("--manifests", nargs=2, metavar=("MANIFEST_A", "MANIFEST_B"),
                   help="use the measured per-iteration cost ratio of two runs")
    c.add_argument("--column", default="log_target")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify-appendix", help="check that every root move has acceptance ratio 1")
    v.add_argument("config")
    v.add_argument("--iterations", type=int)
    v.add_argument("--tol", type=float, default=1e-8)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"treemh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantViolationError, IrrecoverableStateError) as exc:
        print(f"treemh: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except _DATA_ERRORS as exc:
        print(f"treemh: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
