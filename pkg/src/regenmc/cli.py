"""Command-line interface: ``regenmc estimate | verify | sample``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from regenmc import __version__
from regenmc import local_time as lt
from regenmc import verify
from regenmc.brownian import DEFAULT_DT, DEFAULT_KAPPA, derive_seed
from regenmc.estimator import (
    RESULT_KEYS, EstimatorConfig, IntegrabilityRefused, IntegrabilityWarning, TooFewCycles,
    estimate, new_seed, sample_limit_Q,
)
from regenmc.integrand import ExprError, parse
from regenmc.integrand import __doc__ as GRAMMAR_DOC
from regenmc.regeneration import read_durations_csv, write_durations_csv

EXIT_OK, EXIT_ERROR, EXIT_TOO_FEW_CYCLES, EXIT_REFUSED, EXIT_REJECTED = 0, 1, 2, 3, 4


@dataclass
class RunManifest:
    command_line: list[str]
    seed: int
    dt: Optional[float] = None
    epsilon: Optional[float] = None
    horizon: Optional[float] = None
    streams: Optional[int] = None
    tool_version: str = __version__
    wall_clock_seconds: float = 0.0
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


def default_streams() -> int:
    env = os.environ.get("REGENMC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def count(text: str) -> int:
    v = float(text)
    if v != int(v) or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def csv_text(rows: Iterable[dict], columns: Optional[Sequence[str]] = None) -> str:
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit(text: str, out: Optional[str], manifest: RunManifest, t0: float) -> None:
    manifest.wall_clock_seconds = time.perf_counter() - t0
    meta = json.dumps(asdict(manifest), indent=2)
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
        with open(out + ".manifest.json", "w") as fh:
            fh.write(meta + "\n")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
        print("manifest: " + json.dumps(asdict(manifest)), file=sys.stderr)


def _seed(args) -> int:
    return args.seed if args.seed is not None else new_seed()


def _read_expr(args):
    if args.f_file:
        with open(args.f_file, encoding="utf-8") as fh:
            return parse(fh.read().strip())
    return parse(args.f)


def _estimator_config(args, seed: int, streams: int) -> EstimatorConfig:
    return EstimatorConfig(dt=args.dt, alpha=args.alpha, seed=seed, streams=streams,
                           kappa=args.kappa, fine_radius=args.fine_radius)


def cmd_estimate(args) -> int:
    t0 = time.perf_counter()
    try:
        f = _read_expr(args)
    except ExprError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    seed = _seed(args)
    streams = default_streams() if args.streams is None else args.streams
    if os.environ.get("REGENMC_THREADS"):
        streams = default_streams()
    config = _estimator_config(args, seed, streams)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", IntegrabilityWarning)
            result = estimate(f, args.horizon, config)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except IntegrabilityRefused as exc:
        print(f"error: IntegrabilityRefused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except TooFewCycles as exc:
        print(f"error: TooFewCycles: {exc}", file=sys.stderr)
        return EXIT_TOO_FEW_CYCLES
    except ExprError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    data = result.to_dict()
    text = json.dumps(data, indent=2) + "\n" if args.format == "json" else csv_text([data], RESULT_KEYS)
    manifest = RunManifest(args.command_line, seed, dt=args.dt, horizon=args.horizon, streams=streams)
    emit(text, args.out, manifest, t0)
    return EXIT_OK


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    seed = _seed(args)
    manifest = RunManifest(args.command_line, seed, dt=getattr(args, "dt", None))
    sub = args.verify_cmd
    columns = None
    if sub == "local-time-law":
        battery = verify.local_time_law(args.x, args.n, seed=seed, dt=args.dt, epsilon=args.epsilon,
                                        accept_at=args.significance)
        columns = verify.LOCAL_TIME_COLUMNS
        manifest.epsilon = args.epsilon
    elif sub == "moments":
        battery = verify.moments(args.x, args.n, seed=seed, source=args.source, dt=args.dt,
                                 epsilon=args.epsilon)
    elif sub == "tail":
        durations = read_durations_csv(args.durations) if args.durations else None
        battery, durations = verify.tail(durations, cycles=args.cycles, seed=seed, dt=args.dt,
                                         streams=args.streams or default_streams())
        if args.durations_out:
            write_durations_csv(args.durations_out, durations)
    elif sub == "ray-knight":
        battery = verify.ray_knight(args.grid, args.n, seed=seed)
    else:
        try:
            f = _read_expr(args)
        except ExprError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_ERROR
        config = EstimatorConfig(dt=args.dt, seed=seed, kappa=args.kappa, alpha=args.alpha)
        manifest.horizon = args.t
        if sub == "clt":
            battery = verify.clt(f, args.t, args.replications, config, args.significance)
        elif sub == "t-quarter":
            battery = verify.t_quarter(f, args.t, args.replications, config, args.reference,
                                       args.significance)
        else:
            battery = verify.kr_limit(f, args.t, args.replications, config, args.reference,
                                      accept_at=args.significance)
    emit(csv_text(battery.rows, columns), args.out, manifest, t0)
    if not battery.accepted:
        print(f"verify {sub}: at least one test rejected", file=sys.stderr)
    return EXIT_OK if battery.accepted else EXIT_REJECTED


def cmd_sample(args) -> int:
    t0 = time.perf_counter()
    seed = _seed(args)
    rng = np.random.default_rng(derive_seed(seed, 0))
    manifest = RunManifest(args.command_line, seed)
    sub = args.sample_cmd
    if sub == "exact":
        draws = lt.sample_exact(lt.exact_law(args.x), rng, args.n)
        rows, columns = ({"L": v} for v in draws), ["L"]
    elif sub == "path":
        manifest.dt, manifest.epsilon = args.dt, args.epsilon
        vals = lt.path_local_times(args.x, args.n, epsilon=args.epsilon, dt=args.dt, seed=seed)
        columns = [f"L({x:g})" for x in args.x]
        rows = (dict(zip(columns, r)) for r in vals)
    elif sub == "process":
        try:
            vals = lt.sample_process_unit_interval(args.grid, rng, args.n)
        except lt.GridOutOfRange as exc:
            print(f"error: GridOutOfRange: {exc}", file=sys.stderr)
            return EXIT_ERROR
        columns = [f"L({x:g})" for x in args.grid]
        rows = (dict(zip(columns, r)) for r in vals)
    else:
        rows, columns = ({"q": v} for v in sample_limit_Q(rng, args.n)), ["q"]
    emit(csv_text(rows, columns), args.out, manifest, t0)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, seed_help: str = "random seed (default: OS entropy, recorded in the manifest)"):
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.add_argument("--out", default=None, help="output file (default: stdout); a .manifest.json is written next to it")


def _integrand_args(p: argparse.ArgumentParser, required: bool = True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--f", help="integrand expression in x, e.g. \"exp(-x^2)\"")
    g.add_argument("--f-file", help="file holding one UTF-8 integrand expression")


class Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit 2 is reserved for too few cycles."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = Parser(
        prog="regenmc",
        description="Regenerative Brownian-motion Monte Carlo for integrals on the real line.",
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"regenmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser(
        "estimate",
        help="estimate the integral of f with a confidence interval",
        formatter_class=fmt,
        description="Estimate the integral of f over the real line from one Brownian path "
                    "cut at regeneration times (first return to 0 after hitting 1).\n\n"
                    "Exit codes: 0 ok, 1 parse/domain error, 2 fewer than 2 completed cycles, "
                    "3 integral of |f| diverges. A warning is printed when the integral of "
                    "|f(x)| sqrt(|x|) is not finite: the interval is then not "
                    "guaranteed.\n\nExpression grammar:\n" + GRAMMAR_DOC.split("Grammar (whitespace is ignored)::", 1)[1],
    )
    _integrand_args(est)
    est.add_argument("--horizon", type=float, default=1e6, help="Brownian time budget t (default: 1e6)")
    est.add_argument("--dt", type=float, default=DEFAULT_DT, help="finest time step (default: 1e-4)")
    est.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level (default: 0.05)")
    est.add_argument("--streams", type=int, default=None,
                     help="independent path streams (default: logical cores; REGENMC_THREADS overrides)")
    est.add_argument("--kappa", type=float, default=DEFAULT_KAPPA,
                     help="step growth factor away from the integrand's support; 0 = fixed dt (default: 0.2)")
    est.add_argument("--fine-radius", type=float, default=None,
                     help="half-width of the zone simulated at dt (default: from f)")
    est.add_argument("--format", choices=("json", "csv"), default="json", help="output format (default: json)")
    _common(est)
    est.set_defaults(func=cmd_estimate)

    ver = sub.add_parser("verify", help="statistical checks of the closed-form laws (exit 4 on rejection)")
    vsub = ver.add_subparsers(dest="verify_cmd", required=True)

    p = vsub.add_parser("local-time-law", help="path-based L(T,x) vs the exact law (KS + binomial atom test)")
    p.add_argument("--x", type=float_list, default=list(verify.LAW_LEVELS), help="levels (default: -2,-0.5,0,0.25,0.5,0.75,1,1.5,3)")
    p.add_argument("--n", type=count, default=2000, help="cycles (default: 2000)")
    p.add_argument("--dt", type=float, default=lt.VERIFY_DT, help="time step (default: 1e-5)")
    p.add_argument("--epsilon", type=float, default=lt.DEFAULT_EPSILON, help="band half-width (default: 1e-3)")
    p.add_argument("--significance", type=float, default=0.01, help="test level (default: 0.01)")
    _common(p)

    p = vsub.add_parser("moments", help="mean and second moment of L(T,x) within 3 SE")
    p.add_argument("--x", type=float_list, default=[-1.0, 0.5, 2.0], help="levels (default: -1,0.5,2)")
    p.add_argument("--n", type=count, default=20000, help="samples per level (default: 20000)")
    p.add_argument("--source", choices=("exact", "path"), default="exact", help="sampler (default: exact)")
    p.add_argument("--dt", type=float, default=lt.VERIFY_DT, help="time step for --source path (default: 1e-5)")
    p.add_argument("--epsilon", type=float, default=lt.DEFAULT_EPSILON, help="band half-width for --source path (default: 1e-3)")
    _common(p)

    p = vsub.add_parser("tail", help="log-log slope of the cycle-duration survival (expects about -1/2)")
    p.add_argument("--cycles", type=count, default=100_000, help="cycles to simulate (default: 100000)")
    p.add_argument("--durations", default=None, help="read durations from a CSV with header 'duration' instead")
    p.add_argument("--durations-out", default=None, help="write simulated durations as CSV")
    p.add_argument("--dt", type=float, default=DEFAULT_DT, help="time step (default: 1e-4)")
    p.add_argument("--streams", type=int, default=None, help="streams (default: logical cores)")
    _common(p)

    p = vsub.add_parser("ray-knight", help="mean/covariance of L(T,.) on [0,1] vs 4min(x,y)^2+4min(1-x,1-y)^2")
    p.add_argument("--grid", type=float_list, default=[0.1, 0.3, 0.5, 0.7, 0.9], help="grid in [0,1] (default: 0.1,...,0.9)")
    p.add_argument("--n", type=count, default=100_000, help="process draws (default: 100000)")
    _common(p)

    for name, t_default, reps_default, refs, help_text in (
        ("clt", 1e5, 200, None, "normal limit of sqrt(N)(lambda*-lambda)/sigma-hat and CI coverage"),
        ("t-quarter", 1e5, 300, ("stated", "renewal"), "t^(1/4)(lambda*-lambda)/sigma vs the stable-time-changed limit"),
        ("kr-limit", 1e4, 500, ("stated", "local-time"), "t^(-1/2) * integral of f(B) vs its limit law"),
    ):
        p = vsub.add_parser(name, help=help_text)
        _integrand_args(p, required=False)
        p.set_defaults(f="exp(-x^2)")
        p.add_argument("--t", type=float, default=t_default, help=f"horizon (default: {t_default:g})")
        p.add_argument("--replications", type=count, default=reps_default, help=f"replications (default: {reps_default})")
        p.add_argument("--dt", type=float, default=DEFAULT_DT, help="time step (default: 1e-4)")
        p.add_argument("--kappa", type=float, default=DEFAULT_KAPPA, help="step growth factor (default: 0.2)")
        p.add_argument("--alpha", type=float, default=0.05, help="CI level for coverage (default: 0.05)")
        p.add_argument("--significance", type=float, default=0.01, help="test level (default: 0.01)")
        if refs:
            p.add_argument("--reference", choices=refs, default="stated", help="reference law (default: stated)")
        _common(p)
    ver.set_defaults(func=cmd_verify)

    smp = sub.add_parser("sample", help="emit draws as CSV")
    ssub = smp.add_subparsers(dest="sample_cmd", required=True)
    p = ssub.add_parser("exact", help="draws of L(T,x) from the exact law")
    p.add_argument("--x", type=float, required=True, help="level")
    p.add_argument("--n", type=count, default=100_000, help="draws (default: 100000)")
    _common(p)
    p = ssub.add_parser("path", help="occupation-density local times from simulated cycles")
    p.add_argument("--x", type=float_list, required=True, help="levels")
    p.add_argument("--n", type=count, default=1000, help="cycles (default: 1000)")
    p.add_argument("--dt", type=float, default=lt.VERIFY_DT, help="time step (default: 1e-5)")
    p.add_argument("--epsilon", type=float, default=lt.DEFAULT_EPSILON, help="band half-width (default: 1e-3)")
    _common(p)
    p = ssub.add_parser("process", help="draws of the local time process on a grid in [0,1]")
    p.add_argument("--grid", type=float_list, required=True, help="increasing grid in [0,1]")
    p.add_argument("--n", type=count, default=1000, help="draws (default: 1000)")
    _common(p)
    p = ssub.add_parser("limit-q", help="draws of B(V) with V stable of index 1/2")
    p.add_argument("--n", type=count, default=100_000, help="draws (default: 100000)")
    _common(p)
    smp.set_defaults(func=cmd_sample)
    return parser


# flags whose values may legitimately start with "-" (negative levels, "-x^2")
DASH_VALUE_FLAGS = ("--x", "--grid", "--f")


def _join_dash_values(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in DASH_VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    raw = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_join_dash_values(raw))
    args.command_line = ["regenmc", *raw]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
