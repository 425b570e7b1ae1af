"""Command-line front end.

Every subcommand reads a model file, runs one computation and writes CSV
with a header line to ``--output`` (default standard output). Library
errors map to distinct exit codes, listed in ``orthant_ld.errors``.
"""
from __future__ import annotations

import argparse
import contextlib
import itertools
import math
import sys
import numpy as np

from .csvio import write_csv
from .errors import ArtifactError
from .model import dump_model, format_face, load_model, parse_face, validate
from .pathcost import PiecewisePath, cost_report_csv, dilated_cost, load_path, refine_trace
from .simulate import (
    TubeSpec,
    build_twist,
    ld_check,
    ld_check_csv,
    simulate_ctmc,
    tube_probability,
    twisted_tube_probability,
)
from .spectral import default_schedule, face_lambda
from .variational import RateOptions, local_rate_result, with_schedule

__all__ = ["main", "build_parser", "parse_grid"]

USAGE_EXIT = 2


def parse_grid(text: str) -> np.ndarray:
    """``start:step:stop`` (stop included) or a single number."""
    text = text.strip()
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if len(vals) == 1:
        return np.array(vals)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"grid {text!r} must look like start:step:stop")
    start, step, stop = vals
    if step == 0 or (stop - start) / step < 0:
        raise argparse.ArgumentTypeError(f"grid {text!r} does not reach its stop value")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _vector_grid(text: str | None, size: int, what: str) -> list[np.ndarray]:
    """Cartesian product of comma-separated per-coordinate grids."""
    text = "" if text is None else text.strip()
    if size == 0:
        if text:
            raise argparse.ArgumentTypeError(f"{what} must be empty for this face")
        return [np.zeros(0)]
    pieces = text.split(",") if text else []
    if len(pieces) != size:
        raise argparse.ArgumentTypeError(f"{what} needs {size} comma-separated grids, got {len(pieces)}")
    grids = [parse_grid(p) for p in pieces]
    return [np.array(c) for c in itertools.product(*grids)]


def _int_list(text: str) -> list[int]:
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out or any(v < 1 for v in out):
        raise argparse.ArgumentTypeError("integer list entries must be at least 1")
    return out


def _positive(kind):
    def conv(text):
        val = kind(text)
        if not val > 0:
            raise argparse.ArgumentTypeError(f"{text} must be positive")
        return val

    return conv


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad vector {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("model", help="model file")
    common.add_argument("--output", "-o", help="CSV destination (default: standard output)")
    common.add_argument("--dump", metavar="FILE", help="also write the parsed model to FILE")
    common.add_argument("--threads", type=_positive(int), default=1, help="worker threads for replications")

    rate_opts = argparse.ArgumentParser(add_help=False)
    rate_opts.add_argument("--kmax", type=_positive(int), help="largest truncation radius")
    rate_opts.add_argument("--tol", type=_positive(float), default=1e-10, help="truncation convergence tolerance")
    rate_opts.add_argument("--gtol", type=_positive(float), default=1e-9, help="ascent gradient tolerance")

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--reps", type=_positive(int), required=True)
    mc.add_argument("--seed", type=int, required=True)
    mc.add_argument("--delta", type=_positive(float), required=True, help="tube half-width")

    p = argparse.ArgumentParser(prog="orthant-ld", description="Local large-deviation rates of orthant jump networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check the model on a finite box")
    s.add_argument("--radius", type=_positive(int), default=None, help="box radius (default: max(range, 6))")

    s = sub.add_parser("lambda", parents=[common], help="truncated exponents along a radius schedule")
    s.add_argument("--face", required=True)
    s.add_argument("--alpha", nargs="?", const="", default="", help="comma-separated start:step:stop grids")
    s.add_argument("--kmax", type=_positive(int), default=256)
    s.add_argument("--tol", type=_positive(float), default=1e-9)
    s.add_argument("--shrink", action="store_true", help="restrict boxes to the origin's class")

    s = sub.add_parser("rate", parents=[common, rate_opts], help="local rate function on a velocity grid")
    s.add_argument("--face", required=True)
    s.add_argument("--v", required=True, help="N comma-separated start:step:stop grids")

    s = sub.add_parser("pathcost", parents=[common, rate_opts], help="cost of a piecewise-linear path")
    s.add_argument("--path", required=True, help="CSV with header t,x1,...,xN")
    s.add_argument("--budget", type=float, default=0.0, help="dilation budget (time units)")
    s.add_argument("--refine", type=_int_list, help="report the cost of uniform re-interpolations with these grid sizes")

    s = sub.add_parser("tube", parents=[common, mc], help="Monte Carlo tube probability")
    s.add_argument("--path", required=True)
    s.add_argument("--n", type=_positive(int), required=True)
    s.add_argument("--constrain-face", help="endpoint event with no hit of {x_i = 0, i in face}")
    s.add_argument("--endpoint-only", action="store_true")
    s.add_argument("--method", choices=("direct", "twisted"), default="direct")
    s.add_argument("--radius", type=_positive(int), help="truncation radius of the twisted kernel")
    s.add_argument("--trajectory", metavar="FILE", help="write one scaled trajectory as CSV t,x1..xN")

    s = sub.add_parser("ldcheck", parents=[common, mc, rate_opts], help="empirical decay rate against its target")
    s.add_argument("--x", type=_vector, help="start point")
    s.add_argument("--v", type=_vector, help="velocity")
    s.add_argument("--T", type=_positive(float), help="horizon")
    s.add_argument("--face", help="face of the line (default: face of the start point)")
    s.add_argument("--path", help="tube around this path instead of a straight-line endpoint event")
    s.add_argument("--n", type=_int_list, required=True, help="comma-separated scaling parameters")
    s.add_argument("--methods", default="direct,twisted")
    s.add_argument("--radius", type=_positive(int))
    return p


def _rate_options(args) -> RateOptions:
    opts = RateOptions(lambda_tol=args.tol, gtol=args.gtol)
    return with_schedule(opts, args.kmax) if args.kmax else opts


def _cmd_validate(model, args, out):
    radius = args.radius or max(model.range, 6)
    rep = validate(model, radius)
    header = ["box_radius", "n_states", "connected", "gamma_hat", "path_ratio", "empty_faces"]
    empty = " ".join(format_face(f) for f in rep.empty_faces)
    write_csv(header, [[rep.box_radius, rep.n_states, rep.connected, rep.gamma_hat, rep.path_ratio, empty]], out)


def _cmd_lambda(model, args, out):
    face = parse_face(args.face, model.dimension)
    schedule = [m for m in default_schedule(args.kmax)]
    rows = []
    for alpha in _vector_grid(args.alpha, len(face), "--alpha"):
        est = face_lambda(model, face, alpha, schedule, args.tol, shrink=args.shrink)
        for k, (m, lam) in enumerate(est.trace):
            last = k == len(est.trace) - 1
            rows.append([*alpha, m, lam, est.converged if last else False])
    header = [f"alpha_{i + 1}" for i in sorted(face)] + ["m", "lambda", "converged"]
    write_csv(header, rows, out)


def _cmd_rate(model, args, out):
    face = parse_face(args.face, model.dimension)
    opts = _rate_options(args)
    rows = []
    for v in _vector_grid(args.v, model.dimension, "--v"):
        res = local_rate_result(model, face, v, opts)
        alpha = [] if res.alpha is None else list(res.alpha)
        alpha += [float("nan")] * (len(face) - len(alpha))
        rows.append([format_face(face), *v, res.value, *alpha, res.converged])
    header = ["face"] + [f"v_{i}" for i in range(1, model.dimension + 1)] + ["rate"]
    header += [f"alpha_{i + 1}" for i in sorted(face)] + ["converged"]
    write_csv(header, rows, out)


def _cmd_pathcost(model, args, out):
    path = load_path(args.path)
    opts = _rate_options(args)
    if args.refine:
        budgets = [args.budget]
        trace = refine_trace(model, _shifted(path), path.horizon, args.refine, budgets, opts)
        write_csv(["grid", "budget", "cost"], trace, out)
        return
    breakdown, _ = dilated_cost(model, path, args.budget, opts)
    cost_report_csv(breakdown, out)
    print(f"total cost {breakdown.total:.17g}", file=sys.stderr)


def _shifted(path: PiecewisePath):
    return lambda t: path(t + path.times[0])


def _cmd_tube(model, args, out):
    path = load_path(args.path)
    face = parse_face(args.constrain_face, model.dimension) if args.constrain_face else None
    spec = TubeSpec(path, args.delta, args.n, constrain_face=face, endpoint_only=args.endpoint_only)
    if args.method == "twisted":
        if face is None:
            raise ArtifactError("the twisted estimator needs --constrain-face")
        v = (path.points[-1] - path.points[0]) / path.horizon
        radius = args.radius or 16
        kernel = build_twist(model, face, radius, v)
        est = twisted_tube_probability(model, spec, kernel, args.reps, args.seed, args.threads)
    else:
        est = tube_probability(model, spec, args.reps, args.seed, args.threads)
    header = ["n", "method", "reps", "hits", "p_hat", "log_over_n", "stderr"]
    write_csv(header, [[spec.n, est.method, est.reps, est.hits, est.p_hat, est.log_over_n, est.stderr_log]], out)
    if args.trajectory:
        traj = simulate_ctmc(model, spec.initial_state(), spec.n * path.horizon, seed=args.seed)
        with open(args.trajectory, "w") as fh:
            write_csv(
                ["t"] + [f"x{i}" for i in range(1, model.dimension + 1)],
                ([path.times[0] + t / spec.n, *(x / spec.n)] for t, x in zip(traj.times, traj.states)),
                fh,
            )


def _cmd_ldcheck(model, args, out):
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if any(m not in ("direct", "twisted") for m in methods):
        raise argparse.ArgumentTypeError("--methods takes direct and/or twisted")
    opts = _rate_options(args)
    if args.path:
        path = load_path(args.path)
        rows = ld_check(model, None, None, None, None, args.n, args.delta, args.reps, args.seed,
                        opts=opts, threads=args.threads, path=path)
    else:
        if args.x is None or args.v is None or args.T is None:
            raise argparse.ArgumentTypeError("ldcheck needs --x, --v and --T (or --path)")
        face = parse_face(args.face, model.dimension) if args.face else frozenset(np.flatnonzero(args.x > 0).tolist())
        rows = ld_check(model, args.x, args.v, args.T, face, args.n, args.delta, args.reps, args.seed,
                        methods=methods, radius=args.radius, opts=opts, threads=args.threads)
    ld_check_csv(rows, out)


COMMANDS = {
    "validate": _cmd_validate,
    "lambda": _cmd_lambda,
    "rate": _cmd_rate,
    "pathcost": _cmd_pathcost,
    "tube": _cmd_tube,
    "ldcheck": _cmd_ldcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        model = load_model(args.model)
        if args.dump:
            with open(args.dump, "w") as fh:
                fh.write(dump_model(model))
        with contextlib.ExitStack() as stack:
            out = stack.enter_context(open(args.output, "w", newline="")) if args.output else sys.stdout
            COMMANDS[args.command](model, args, out)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 12
    return 0


if __name__ == "__main__":
    sys.exit(main())
