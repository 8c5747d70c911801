"""Command-line interface: ``dh-distance <command> ...``.

Commands
--------
validate   structural checks and regularity of a pencil (JSON)
bounds     closed-form lower/upper bounds for both targets (JSON)
distance   bisection on the inner flows; JSON result, optional CSV outputs
curve      warm-started samples of f(eps) on a grid (CSV)
generate   write a random or mass-spring-damper pencil as Matrix Market files

Exit codes: 0 success, 1 numerical failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .errors import InputError, NumericalFailure
from .flow import write_trace_csv
from .io import read_pencil, write_bundled, write_pencil
from .outer import OuterConfig, bisection_distance, f_curve, write_curve_csv
from .pencil import (
    Target,
    gen_mass_spring_damper,
    gen_random_dh,
    instability_bounds,
    singularity_bounds,
    validate,
)

CSV_HELP = """\
CSV outputs:
  --curve-csv / curve --csv   columns: epsilon, f_value
  --trace-csv                 columns: step, h, F, residual (final inner flow)
"""


def _threads() -> int:
    raw = os.environ.get("DH_DISTANCE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"DH_DISTANCE_THREADS must be an integer, got {raw!r}") from None


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load(args):
    if args.pencil:
        if args.E or args.J or args.R:
            raise InputError("use either --pencil or --E/--J/--R")
        p = read_pencil(args.pencil)
    elif args.E and args.J and args.R:
        p = read_pencil(args.E, args.J, args.R)
    else:
        raise InputError("input pencil required: --E, --J and --R, or --pencil")
    if not args.no_validate:
        rep = validate(p)
        if not (rep.is_psd_E and rep.is_psd_R):
            logging.getLogger(__name__).warning(
                "E or R is not positive semidefinite (min eigenvalues %.3e, %.3e)",
                rep.min_eig_E, rep.min_eig_R)
    return p


def _outer_config(args) -> OuterConfig:
    flow = {"max_steps": args.max_steps, "tol_F": args.tol_F}
    return OuterConfig(target=args.target, method=args.variant, functional=args.functional,
                       tol=args.tol, tol_eps=args.tol_eps, k_max=args.k_max,
                       restarts=args.restarts, kick=args.kick, max_expand=args.max_expand,
                       eps_lb=args.eps_lb,
                       eps_ub=args.eps_ub, seed=args.seed, workers=_threads(), flow=flow)


def cmd_validate(args) -> int:
    _emit(validate(_load(args)).to_dict(), args.json)
    return 0


def cmd_bounds(args) -> int:
    p = _load(args)
    out = {"singularity": list(singularity_bounds(p)), "instability": list(instability_bounds(p))}
    _emit({k: [float(v) for v in b] for k, b in out.items()}, args.json)
    return 0


def cmd_distance(args) -> int:
    p = _load(args)
    cfg = _outer_config(args)
    res = bisection_distance(p, cfg)
    doc = res.to_dict()
    doc["run"] = {
        "functional": cfg.functional, "tol": cfg.tol, "tol_eps": cfg.tol_eps,
        "k_max": cfg.k_max, "restarts": cfg.restarts, "seed": cfg.seed,
        "max_steps": args.max_steps, "tol_F": args.tol_F,
    }
    doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    _emit(doc, args.json)
    if args.curve_csv:
        write_curve_csv(sorted(res.f_samples), args.curve_csv)
    if args.trace_csv:
        write_trace_csv(res.trace, args.trace_csv)
    return 0


def cmd_curve(args) -> int:
    if args.steps < 1:
        raise InputError("--steps must be >= 1")
    if not 0 <= args.eps_min <= args.eps_max:
        raise InputError("need 0 <= --eps-min <= --eps-max")
    p = _load(args)
    grid = np.linspace(args.eps_min, args.eps_max, args.steps)
    samples = f_curve(p, grid, _outer_config(args))
    if args.csv:
        write_curve_csv(samples, args.csv)
    else:
        print("epsilon,f_value")
        for e, f in samples:
            print(f"{e!r},{f!r}")
    return 0


def cmd_generate(args) -> int:
    if args.model == "random":
        if args.n is None:
            raise InputError("--n is required for the random model")
        p = gen_random_dh(args.n, args.seed)
    else:
        if args.N is None:
            raise InputError("--N is required for the msd model")
        p = gen_mass_spring_damper(args.N, args.m, args.gamma)
    if args.bundle:
        paths = [write_bundled(p, args.out)]
    else:
        paths = write_pencil(p, args.out)
    for path in paths:
        print(path)
    return 0


def _add_input(sp):
    g = sp.add_argument_group("input pencil (Matrix Market)")
    g.add_argument("--E", metavar="FILE")
    g.add_argument("--J", metavar="FILE")
    g.add_argument("--R", metavar="FILE")
    g.add_argument("--pencil", metavar="FILE", help="bundled n x 3n file [E J R]")
    g.add_argument("--no-validate", action="store_true",
                   help="skip the PSD diagnostics on E and R")


def _add_solver(sp):
    g = sp.add_argument_group("solver")
    g.add_argument("--target", choices=["sing", "inst"], default="sing")
    g.add_argument("--variant", choices=["full", "rank2"], default="full")
    g.add_argument("--functional", choices=["standard", "unified"], default="standard")
    g.add_argument("--tol", type=float, default=1e-8, help="threshold for f(eps) = 0")
    g.add_argument("--tol-eps", type=float, default=1e-5, help="relative bracket width")
    g.add_argument("--k-max", type=int, default=60)
    g.add_argument("--restarts", type=int, default=3)
    g.add_argument("--kick", type=float, default=0.1)
    g.add_argument("--max-expand", type=int, default=20,
                   help="doublings of the upper end before giving up")
    g.add_argument("--eps-lb", type=float)
    g.add_argument("--eps-ub", type=float)
    g.add_argument("--max-steps", type=int, default=8000, help="inner Euler steps per solve")
    g.add_argument("--tol-F", type=float, default=1e-7, help="inner relative decrease threshold")
    g.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dh-distance",
        description="Structured distances to singularity and instability of dH pencils.",
        epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="structure and regularity checks")
    _add_input(sp)
    sp.add_argument("--json", metavar="OUT")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("bounds", help="closed-form bounds for both targets")
    _add_input(sp)
    sp.add_argument("--json", metavar="OUT")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("distance", help="distance by bisection", epilog=CSV_HELP,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_input(sp)
    _add_solver(sp)
    sp.add_argument("--json", metavar="OUT", help="result document (stdout if omitted)")
    sp.add_argument("--curve-csv", metavar="OUT", help="sampled (epsilon, f_value) pairs")
    sp.add_argument("--trace-csv", metavar="OUT", help="trace of the final inner flow")
    sp.set_defaults(func=cmd_distance)

    sp = sub.add_parser("curve", help="sample f(eps) on a grid", epilog=CSV_HELP,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_input(sp)
    _add_solver(sp)
    sp.add_argument("--eps-min", type=float, required=True)
    sp.add_argument("--eps-max", type=float, required=True)
    sp.add_argument("--steps", type=int, default=21, help="number of grid points")
    sp.add_argument("--csv", metavar="OUT")
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("generate", help="write a test pencil")
    sp.add_argument("model", choices=["random", "msd"])
    sp.add_argument("--out", required=True, help="file prefix (or file with --bundle)")
    sp.add_argument("--bundle", action="store_true")
    sp.add_argument("--n", type=int, help="dimension (random)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--N", type=int, help="number of masses (msd)")
    sp.add_argument("--m", type=int, help="number of constraints (msd, default N+1)")
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "target", None):
        args.target = Target.parse(args.target)
    try:
        return args.func(args)
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
