"""Command-line interface.

Usage::

    vsplines greens|solve|compare|check PROBLEM.json [--out DIR] [--seed N] [--grid-step H]

Exit codes: 0 success, 1 input error, 2 mathematical precondition failure,
3 solver or quadrature non-convergence.  ``VSPLINES_NUM_THREADS`` sets the
number of workers used for lambda paths and nothing else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import (
    AdmissibilityError,
    AssumptionError,
    NonInvertibleError,
    NullspaceError,
    QuadratureError,
    SolverDivergenceError,
    VerificationError,
)
from .io import ProblemError, dumps, load_problem
from .pipeline import assemble, run_check, run_compare, run_greens, run_solve, with_seed, write_reconstruction_csv

__all__ = ["main", "EXIT_OK", "EXIT_INPUT", "EXIT_MATH", "EXIT_CONVERGENCE"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MATH = 2
EXIT_CONVERGENCE = 3

MATH_ERRORS = (NonInvertibleError, AdmissibilityError, AssumptionError, NullspaceError, VerificationError)
CONVERGENCE_ERRORS = (QuadratureError, SolverDivergenceError)

logger = logging.getLogger("vsplines")


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def cmd_greens(args) -> int:
    problem = load_problem(args.problem)
    report, G = run_greens(problem)
    _write(args.out / "greens.json", dumps(report))
    a, b, n = problem.sample_grid or (-1.0, 4.0, 201)
    G.to_csv(args.out / "greens.csv", a, b, n)
    print(f"wrote {args.out / 'greens.csv'}")
    print(f"det coefficients {report['det']}, null-space dimension {report['nullspace_dim']}, "
          f"verification {'pass' if report['verification']['passed'] else 'FAIL'}")
    return EXIT_OK if report["verification"]["passed"] else EXIT_MATH


def cmd_solve(args) -> int:
    problem = with_seed(load_problem(args.problem), args.seed)
    asm = assemble(problem, args.grid_step)
    report, results = run_solve(asm)
    _write(args.out / "solve.json", dumps(report))
    a, b, n = problem.sample_grid or (asm.mats.grid.start, asm.mats.grid.knots[-1], 201)
    t = np.linspace(a, b, n)
    for i, res in enumerate(results):
        path = args.out / f"reconstruction_{i:03d}.csv"
        write_reconstruction_csv(path, t, res.reconstruct(asm.mats, t))
        print(f"wrote {path}")
        audit = res.audit
        print(f"lambda {res.lam:.6g}: K={audit.K} (bound M-N={audit.bound}), certificate "
              f"{res.certificate.value:.9g} {'pass' if res.converged else 'FAIL'}")
    return EXIT_OK if report["all_certified"] else EXIT_CONVERGENCE


def cmd_compare(args) -> int:
    problem = with_seed(load_problem(args.problem), args.seed)
    asm = assemble(problem, args.grid_step)
    report, tv, _ = run_compare(asm)
    _write(args.out / "compare.json", dumps(report))
    print(f"TV knots {report['tv_knots']}, L2 active coefficients {report['l2_active_coefficients']} "
          f"of M={report['M']}")
    return EXIT_OK if tv.converged else EXIT_CONVERGENCE


def cmd_check(args) -> int:
    problem = load_problem(args.problem)
    report = run_check(problem, args.grid_step)
    _write(args.out / "check.json", dumps(report))
    print(f"invertible: {report['invertible']}")
    if "controllability_rank" in report:
        state = "controllable" if report["controllable"] else "not controllable"
        print(f"controllability rank {report['controllability_rank']} of {report['dim']}: {state}")
    if "Q_full_rank" in report and not report["Q_full_rank"]:
        print(f"Q rank check failed: {report['Q_message']}")
    for a in report.get("admissibility", []):
        print(f"measurement {a['index']} ({a['functional']}): {'admissible' if a['passed'] else 'NOT admissible'}")
    if "injectivity" in report:
        inj = report["injectivity"]
        print(f"null-space injectivity: rank {inj['rank']} of N={inj['N']}")
    print("proceed" if report["proceed"] else "do not proceed")
    return EXIT_OK


COMMANDS = {"greens": cmd_greens, "solve": cmd_solve, "compare": cmd_compare, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsplines", description="Vector-valued L-spline toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("problem", type=Path, help="problem file (JSON)")
    p.add_argument("--out", type=Path, default=Path("vsplines_out"), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p.add_argument("--grid-step", type=float, default=None, help="override the knot grid step")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.grid_step is not None and not args.grid_step > 0:
        print("error: --grid-step must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except ProblemError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MATH_ERRORS as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_MATH
    except CONVERGENCE_ERRORS as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
