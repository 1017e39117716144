"""End-to-end pipeline from a parsed problem to Green's matrices, solves and reports.

These functions return plain dictionaries ready for :func:`vsplines.io.dumps`
so that the command-line front end only handles arguments, files and exit
codes.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import AssumptionError
from .forward import (
    Grid,
    SystemMatrices,
    admissibility_check,
    build_system,
    nullspace_injectivity_check,
    simulate_data,
)
from .io import Problem
from .l2 import compare_l1_l2, l2_fit
from .mdo import (
    GreensMatrix,
    NullspaceBasis,
    constant_smith,
    controllability_rank,
    greens_matrix,
    greens_verify,
    nullspace_basis,
    regularity_bound,
    regularity_table,
)
from .prox import regularizer_dual, regularizer_value
from .solver import SolveConfig, SolveResult, fista_solve, lambda_max

__all__ = [
    "Assembled",
    "assemble",
    "resolve_lambdas",
    "run_greens",
    "run_solve",
    "run_compare",
    "run_check",
    "write_reconstruction_csv",
    "num_threads",
    "with_seed",
]

logger = logging.getLogger(__name__)

THREADS_ENV = "VSPLINES_NUM_THREADS"
DEFAULT_GRID_POINTS = 100


def num_threads() -> int:
    """Worker count for lambda paths, from ``VSPLINES_NUM_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1


@dataclass
class Assembled:
    problem: Problem
    G: GreensMatrix
    basis: NullspaceBasis
    mats: SystemMatrices
    y: np.ndarray


def _default_grid(problem: Problem) -> Grid:
    times = [t for nu in problem.measurements for t in nu.support_times()]
    if not times:
        raise ValueError("cannot place a default grid without measurements")
    a, b = min(times), max(times)
    step = (b - a) / DEFAULT_GRID_POINTS if b > a else 1.0
    return Grid.spanning(a, b, step)


def _grid(problem: Problem, grid_step: float | None) -> Grid:
    grid = problem.grid or _default_grid(problem)
    if grid_step is not None:
        stop = grid.start + grid.step * (grid.count - 1)
        grid = Grid.spanning(grid.start, stop, float(grid_step))
    return grid


def assemble(problem: Problem, grid_step: float | None = None, seed: int | None = None) -> Assembled:
    """Green's matrix, null space, system matrices and data for ``problem``.

    ``seed`` overrides the noise seed of the file; it never affects the
    matrices.
    """
    if not problem.measurements:
        raise ValueError("problem has no measurements")
    L = problem.operator
    G = greens_matrix(L)
    basis = nullspace_basis(L)
    Qdag = problem.right_inverse
    grid = _grid(problem, grid_step)
    if Qdag is None:
        mats = build_system(G, basis, problem.measurements, grid)
    else:
        mats = build_system(G, basis, problem.measurements, grid, mode="q_reduced", Qdagger=Qdag)
    if problem.y is not None:
        y = np.asarray(problem.y, dtype=float)
    elif problem.ground_truth is not None:
        seed = problem.seed if seed is None else seed
        y = simulate_data(problem.ground_truth, mats.dictionary, basis, problem.measurements,
                          problem.noise_sigma, seed)
    else:
        raise ValueError("problem has neither data nor a ground truth")
    return Assembled(problem, G, basis, mats, y)


def resolve_lambdas(asm: Assembled) -> list[float]:
    """Absolute lambda values; relative ones multiply ``||A^T y||_dual``."""
    p = asm.problem
    if not p.relative:
        return list(p.lambdas)
    scale = regularizer_dual(asm.mats.group_view(asm.mats.A.T @ asm.y), p.norm)
    # zero data: every positive lambda gives the zero solution
    return [r * scale if scale > 0 else r for r in p.lambdas]


def _config(problem: Problem, lam: float) -> SolveConfig:
    s = problem.solver
    kw = {k: s[k] for k in ("max_iters", "rel_tol", "restart", "trim_threshold", "certificate_tol", "polish",
                            "working_set") if k in s}
    return SolveConfig(lam=lam, norm=problem.norm, **kw)


def _sample_times(asm: Assembled) -> np.ndarray:
    if asm.problem.sample_grid is not None:
        a, b, n = asm.problem.sample_grid
        return np.linspace(a, b, n)
    g = asm.mats.grid
    return np.linspace(g.start, g.start + g.step * (g.count - 1), 201)


def write_reconstruction_csv(path, t: np.ndarray, F: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"f{d}" for d in range(F.shape[1])])
        for ti, row in zip(t, F):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])


# -- commands -----------------------------------------------------------------

def run_greens(problem: Problem) -> tuple[dict, GreensMatrix]:
    """Determinant, Green's matrix, regularity and null-space summary."""
    L = problem.operator
    G = greens_matrix(L, verify=False)
    rep = greens_verify(L, G)
    basis = nullspace_basis(L)
    report = {
        "name": problem.name,
        "dim": L.rows,
        "det": G.det_op.to_list(),
        "nullspace_dim": G.nullspace_dim,
        "nullspace_residual": basis.residual,
        "entries": [[e.describe() for e in row] for row in G.entries],
        "regularity": regularity_table(G),
        "regularity_bound": regularity_bound(L),
        "verification": rep.to_dict(),
    }
    if problem.is_first_order and problem.P is not None:
        report["controllability_rank"] = controllability_rank(problem.A_state, problem.P)
    return report, G


def _solve_one(asm: Assembled, lam: float) -> SolveResult:
    return fista_solve(asm.mats, asm.y, _config(asm.problem, lam))


def run_solve(asm: Assembled) -> tuple[dict, list[SolveResult]]:
    """Solve for every lambda; results come back in input order."""
    lams = resolve_lambdas(asm)
    workers = min(num_threads(), len(lams))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda lam: _solve_one(asm, lam), lams))
    else:
        results = [_solve_one(asm, lam) for lam in lams]
    norm = asm.problem.norm
    mags = [regularizer_value(r.coefficients, norm) for r in results]
    order = np.argsort(lams, kind="stable")
    sorted_mags = [mags[i] for i in order]
    monotone = all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(sorted_mags, sorted_mags[1:]))
    report = {
        "name": asm.problem.name,
        "fingerprint": asm.mats.fingerprint(),
        "M": asm.mats.M,
        "N": asm.mats.N,
        "grid": asm.mats.grid.to_dict(),
        "y": asm.y,
        "lambda_max": lambda_max(asm.mats, asm.y, norm),
        "results": [r.to_dict() for r in results],
        "path": {"lambdas": lams, "regularizer": mags, "monotone_nonincreasing": monotone},
        "all_certified": all(r.converged for r in results),
    }
    return report, results


def run_compare(asm: Assembled) -> tuple[dict, SolveResult, object]:
    """TV solve at the first lambda next to the quadratic smoothing spline."""
    lam = resolve_lambdas(asm)[0]
    tv = _solve_one(asm, lam)
    l2_lam = float(asm.problem.solver.get("l2_lambda", 0.0))
    l2 = l2_fit(asm.mats.dictionary, asm.basis, asm.problem.measurements, asm.y, l2_lam)
    report = compare_l1_l2(tv, l2, asm.mats, asm.y, _sample_times(asm))
    report.update({
        "name": asm.problem.name,
        "fingerprint": asm.mats.fingerprint(),
        "tv": tv.to_dict(),
        "l2": l2.to_dict(),
    })
    return report, tv, l2


def run_check(problem: Problem, grid_step: float | None = None) -> dict:
    """Informational report: invertibility, admissibility, injectivity, controllability, Q rank."""
    L = problem.operator
    out: dict = {"name": problem.name, "dim": L.rows}
    det = L.det()
    out["det"] = det.to_list()
    out["invertible"] = not det.is_zero
    if problem.is_first_order and problem.P is not None:
        rank = controllability_rank(problem.A_state, problem.P)
        out["controllability_rank"] = rank
        out["controllable"] = rank == L.rows
    if problem.Q is not None:
        try:
            constant_smith(problem.Q)
            out["Q_full_rank"] = True
        except AssumptionError as exc:
            out["Q_full_rank"] = False
            out["Q_message"] = str(exc)
    if not out["invertible"]:
        out["message"] = "non-invertible MDO: det(L) = 0; no Green's matrix exists"
        out["proceed"] = False
        return out
    G = greens_matrix(L)
    dictionary = G
    try:
        Qdag = problem.right_inverse
    except AssumptionError:
        Qdag = None
    if Qdag is not None:
        dictionary = G.times_constant(Qdag)
    adm = []
    for i, nu in enumerate(problem.measurements):
        rep = admissibility_check(dictionary, nu)
        adm.append({"index": i, "functional": nu.describe(), **rep.to_dict()})
    out["admissibility"] = adm
    basis = nullspace_basis(L)
    out["nullspace_dim"] = basis.size
    Bm = np.array([[nu.apply(v) for v in basis.basis] for nu in problem.measurements]).reshape(
        len(problem.measurements), basis.size)
    out["injectivity"] = nullspace_injectivity_check(Bm).to_dict()
    out["proceed"] = bool(all(a["passed"] for a in adm) and out["injectivity"]["passed"]
                          and out.get("Q_full_rank", True))
    return out


def with_seed(problem: Problem, seed: int | None) -> Problem:
    return problem if seed is None else replace(problem, seed=int(seed))

