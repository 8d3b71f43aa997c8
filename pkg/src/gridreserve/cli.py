"""``gridreserve`` command-line front end.

Exit codes: 0 success, 1 infeasible problem or failed validation, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import conic, errors
from .dispatch import solve_baseline
from .dro import AmbiguitySet, build_ambiguity_set, load_samples, solve_dro
from .events import load_events
from .netmodel import load_case
from .robust import (
    ReserveSchedule, feasibility_radius, load_spec, solve_robust, tune_reserve_gain,
)
from .simharness import (
    DEFAULT_N, METHODS, draw_history, gaussian_from_catalog, mapping_from_catalog, pareto_csv,
    pareto_json, pareto_sweep, solve_method, validate,
)
from .stochastic import load_gaussian, solve_chance

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
_FAILURES = (errors.InfeasibleCase, errors.InfeasibleRobust, errors.NumericalError,
             errors.NoFeasibleGain, errors.NoFeasibleSigma, errors.NonConvergence,
             errors.BisectionNotConverged, errors.DegenerateActiveSet)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _unit_interval(name):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number") from None
        if not 0.0 < v < 1.0:
            raise argparse.ArgumentTypeError(f"{name} must be in (0,1)")
        return v
    return parse


def _grid(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be comma-separated numbers") from None
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise argparse.ArgumentTypeError("grid values must be in (0,1)")
    if vals != sorted(vals):
        raise argparse.ArgumentTypeError("grid must be sorted")
    return vals


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("GRIDRESERVE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise errors.ValidationError("GRIDRESERVE_THREADS must be an integer") from None
    return os.cpu_count() or 1


def _case(args):
    return load_case(args.case, strict=not args.lenient)


def _write_solution(args, sol, sched: ReserveSchedule | None = None) -> None:
    out = Path(args.out)
    write_atomic(out / "solution.json", _dumps(sol.to_dict()))
    write_atomic(out / "solution.csv", sol.to_csv())
    if sched is not None:
        write_atomic(out / "reserves.json", _dumps(sched.to_dict()))
    if args.dump_lp:
        write_atomic(Path(args.dump_lp), conic.dump_lp(sol.prog))
    print(f"{sol.case.name}: {sol.report.status}, objective {sol.objective:.6f}")


# ---------------------------------------------------------------- subcommands

def cmd_baseline(args) -> int:
    sol = solve_baseline(_case(args), args.model)
    _write_solution(args, sol)
    return EXIT_OK


def cmd_robust(args) -> int:
    case = _case(args)
    sol, sched = solve_robust(case, load_spec(args.spec, case), args.model)
    _write_solution(args, sol, sched)
    return EXIT_OK


def cmd_chance(args) -> int:
    sol, sched = solve_chance(_case(args), load_gaussian(args.gaussian), args.alpha, args.model)
    _write_solution(args, sol, sched)
    return EXIT_OK


def cmd_dro_build(args) -> int:
    amb = build_ambiguity_set(load_samples(args.samples), args.rho, args.beta)
    write_atomic(Path(args.out) / "ambiguity.json", _dumps(amb.to_dict()))
    print(f"C={amb.C:.6g} epsilon={amb.epsilon:.6g} sigma={amb.sigma:.6g} "
          f"vertices={len(amb.vertices)}")
    return EXIT_OK


def cmd_dro_solve(args) -> int:
    case = _case(args)
    try:
        amb = AmbiguitySet.from_dict(json.loads(Path(args.ambiguity).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise errors.ParseError(f"cannot read ambiguity set {args.ambiguity}: {exc}") from exc
    sol, sched = solve_dro(case, amb, load_spec(args.mapping, case), args.model)
    _write_solution(args, sol, sched)
    return EXIT_OK


def _solution_for_verify(args, case, spec):
    if args.reserves == "robust":
        return solve_robust(case, spec, args.model)
    sol = solve_baseline(case, args.model)
    return sol, ReserveSchedule.from_solution(sol)


def cmd_verify_radius(args) -> int:
    case = _case(args)
    spec = load_spec(args.spec, case)
    sol, sched = _solution_for_verify(args, case, spec)
    res = feasibility_radius(case, sol, spec, schedule=sched, model=args.model)
    write_atomic(Path(args.out) / "radius.json", _dumps(res.to_dict()))
    print(f"radius {res.radius:.6g} after {res.vertices_checked} recourse solves")
    return EXIT_OK


def cmd_verify_gain(args) -> int:
    case = _case(args)
    spec = load_spec(args.spec, case)
    sol, sched = _solution_for_verify(args, case, spec)
    g = tune_reserve_gain(case, sol, sched, spec, args.direction, model=args.model)
    doc = {"alpha": g.alpha, "direction": args.direction, "inputs": g.inputs,
           "delta_u": g.delta_u.tolist(), "margins_max": g.margins.max,
           "gain_norm": float(np.linalg.norm(g.k))}
    write_atomic(Path(args.out) / "gain.json", _dumps(doc))
    print(f"alpha {g.alpha:.6g}")
    return EXIT_OK


def _method_inputs(args, case, catalog):
    gaussian = load_gaussian(args.gaussian) if args.gaussian else None
    samples = load_samples(args.samples) if args.samples else None
    mapping = load_spec(args.mapping, case) if args.mapping else None
    return gaussian, samples, mapping


def cmd_simulate(args) -> int:
    case = _case(args)
    catalog = load_events(args.events, case, strict=not args.lenient)
    gaussian, samples, mapping = _method_inputs(args, case, catalog)
    if args.method in ("chance", "robust") and gaussian is None:
        gaussian = gaussian_from_catalog(catalog)
    if args.method != "chance" and mapping is None:
        mapping = mapping_from_catalog(catalog, case)
    if args.method in ("dro", "cvar") and samples is None:
        samples = draw_history(catalog, args.history, args.seed)
    sol, sched = solve_method(case, args.method, args.rho, gaussian=gaussian, samples=samples,
                              mapping=mapping, model=args.model)
    rep = validate(case, sol, sched, catalog, None, args.n, args.seed, rho=args.rho,
                   threads=_threads(args))
    out = Path(args.out)
    if args.format == "csv":
        write_atomic(out / "report.csv", rep.to_csv())
    else:
        write_atomic(out / "report.json", rep.to_json())
    print(f"violation probability {rep.probability:.6g} (target {args.rho}): "
          f"{'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_pareto(args) -> int:
    case = _case(args)
    catalog = load_events(args.events, case, strict=not args.lenient)
    gaussian, samples, mapping = _method_inputs(args, case, catalog)
    pts = pareto_sweep(case, args.method, args.grid, args.n, args.seed, catalog,
                       gaussian=gaussian, samples=samples, mapping=mapping, model=args.model,
                       threads=_threads(args))
    out = Path(args.out)
    if args.format == "csv":
        write_atomic(out / "pareto.csv", pareto_csv(pts))
    else:
        write_atomic(out / "pareto.json", pareto_json(pts, args.method))
    for p in pts:
        print(f"rho={p.rho:g} cost={p.cost:.6g} resilience={p.resilience:.6g}"
              + (f" [{p.error}]" if p.error else ""))
    return EXIT_FAIL if any(p.error for p in pts) else EXIT_OK


def cmd_modes(args) -> int:
    case = _case(args) if args.case else None
    sched = load_events(args.events, case, strict=not args.lenient).schedule()
    write_atomic(Path(args.out) / "modes.json", _dumps(sched.to_dict()))
    for (a, b), m in zip(sched.windows, sched.modes):
        print(f"[{a}, {b}) {m}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--lenient", action="store_true", help="ignore unknown keys in input files")
    common.add_argument("--model", choices=("linear", "socp"), default="linear",
                        help="network model")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--dump-lp", metavar="PATH", help="write the solved program in text form")

    p = argparse.ArgumentParser(prog="gridreserve", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, parent=sub, **kw):
        sp = parent.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        return sp

    sp = add("baseline", cmd_baseline, help="economic dispatch without reserves")
    sp.add_argument("--case", required=True)

    sp = add("robust", cmd_robust, help="robust reserve co-optimization over a disturbance box")
    sp.add_argument("--case", required=True)
    sp.add_argument("--spec", required=True)

    sp = add("chance", cmd_chance, help="Gaussian chance-constrained reserves")
    sp.add_argument("--case", required=True)
    sp.add_argument("--gaussian", required=True)
    sp.add_argument("--alpha", type=_unit_interval("alpha"), default=0.05)

    dro = sub.add_parser("dro", help="Wasserstein ambiguity sets").add_subparsers(
        dest="action", required=True)
    sp = add("build-set", cmd_dro_build, dro, help="ambiguity set from samples")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--rho", type=_unit_interval("rho"), required=True)
    sp.add_argument("--beta", type=_unit_interval("beta"), default=None)
    sp = add("solve", cmd_dro_solve, dro, help="reserves against an ambiguity set")
    sp.add_argument("--case", required=True)
    sp.add_argument("--ambiguity", required=True)
    sp.add_argument("--mapping", required=True)

    verify = sub.add_parser("verify", help="post-hoc resilience checks").add_subparsers(
        dest="action", required=True)
    for name, func in (("radius", cmd_verify_radius), ("gain", cmd_verify_gain)):
        sp = add(name, func, verify)
        sp.add_argument("--case", required=True)
        sp.add_argument("--spec", required=True)
        sp.add_argument("--reserves", choices=("robust", "baseline"), default="robust",
                        help="schedule to verify")
        if name == "gain":
            sp.add_argument("--direction", type=int, default=0, help="disturbance dimension index")

    for name, func, text in (("simulate", cmd_simulate, "Monte Carlo validation of one method"),
                             ("pareto", cmd_pareto, "cost against resilience over a rho grid")):
        sp = add(name, func, help=text)
        sp.add_argument("--case", required=True)
        sp.add_argument("--events", required=True)
        sp.add_argument("--method", choices=METHODS, required=True)
        sp.add_argument("--n", type=int, default=DEFAULT_N)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--gaussian")
        sp.add_argument("--samples")
        sp.add_argument("--mapping")
        if name == "simulate":
            sp.add_argument("--rho", type=_unit_interval("rho"), default=0.05)
            sp.add_argument("--history", type=int, default=300,
                            help="samples drawn from the catalog when --samples is absent")
        else:
            sp.add_argument("--grid", type=_grid, default=[0.01, 0.05, 0.1, 0.2])

    sp = add("modes", cmd_modes, help="mode schedule from an events file")
    sp.add_argument("--events", required=True)
    sp.add_argument("--case")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "n", 1) < 1:
        print("gridreserve: error: --n must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "seed", 0) < 0:
        print("gridreserve: error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except _FAILURES as exc:
        print(f"gridreserve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (errors.GridReserveError, ValueError, KeyError) as exc:
        print(f"gridreserve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
