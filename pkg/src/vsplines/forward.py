"""Measurement functionals, admissibility, and system-matrix assembly on a knot grid."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import AdmissibilityError, AssumptionError, QuadratureError
from .genfunc import GeneralizedFunction, gf_convolve_atoms, gf_regularity, linear_combination
from .mdo import GreensMatrix, NullspaceBasis
from .norms import VectorAtomicMeasure

__all__ = [
    "MeasurementFunctional",
    "Grid",
    "SystemMatrices",
    "AdmissibilityReport",
    "InjectivityReport",
    "LSpline",
    "admissibility_check",
    "nullspace_injectivity_check",
    "build_system",
    "simulate_data",
]

QUAD_RTOL = 1e-8


@dataclass(frozen=True)
class MeasurementFunctional:
    """A linear functional on vector-valued functions.

    Use the constructors :meth:`sampling`, :meth:`weighted_sum` and
    :meth:`quadrature` rather than instantiating directly.

    Attributes
    ----------
    kind : {'sampling', 'weighted_sum', 'quadrature'}
    samplings : tuple of (weight, c, t)
        For sampling and weighted-sum kinds, ``sum weight * c^T f(t)``.
    dim, window, weights :
        For the quadrature kind, ``int_a^b w(t) f_dim(t) dt`` where ``w`` is the
        piecewise-linear interpolant of ``weights`` on a uniform grid over
        ``window``.
    """

    kind: str
    samplings: tuple = ()
    dim: int = 0
    window: tuple = (0.0, 0.0)
    weights: tuple = ()

    @classmethod
    def sampling(cls, c, t: float) -> "MeasurementFunctional":
        c = tuple(float(v) for v in np.atleast_1d(c))
        if not any(c):
            raise ValueError("sampling vector c must be nonzero")
        return cls("sampling", ((1.0, c, float(t)),))

    @classmethod
    def weighted_sum(cls, terms: Sequence) -> "MeasurementFunctional":
        """From ``(weight, c, t)`` triples."""
        out = []
        for w, c, t in terms:
            c = tuple(float(v) for v in np.atleast_1d(c))
            if not any(c):
                raise ValueError("sampling vector c must be nonzero")
            out.append((float(w), c, float(t)))
        if not out:
            raise ValueError("weighted sum needs at least one sampling")
        return cls("weighted_sum", tuple(out))

    @classmethod
    def quadrature(cls, dim: int, window, weights=(1.0, 1.0)) -> "MeasurementFunctional":
        a, b = (float(v) for v in window)
        if not b > a:
            raise ValueError("quadrature window must satisfy a < b")
        weights = tuple(float(v) for v in weights)
        if len(weights) < 2:
            raise ValueError("quadrature weight needs at least two samples")
        return cls("quadrature", (), int(dim), (a, b), weights)

    @property
    def is_pointwise(self) -> bool:
        return self.kind in ("sampling", "weighted_sum")

    def support_times(self) -> list[float]:
        if self.is_pointwise:
            return [t for _, _, t in self.samplings]
        return list(self.window)

    def weight_function(self, t: np.ndarray) -> np.ndarray:
        a, b = self.window
        nodes = np.linspace(a, b, len(self.weights))
        return np.interp(t, nodes, self.weights)

    def apply(self, vec: Sequence[GeneralizedFunction]) -> float:
        """Value of the functional on a vector of generalized functions."""
        if self.is_pointwise:
            total = 0.0
            for w, c, t in self.samplings:
                if len(c) != len(vec):
                    raise ValueError(f"sampling vector has length {len(c)}, function has {len(vec)} components")
                h = linear_combination(vec, c)
                total += w * float(h.evaluate_many(np.array([t]))[0])
            return total
        return _integrate_gf(vec[self.dim], self)

    def responses(self, column: Sequence[GeneralizedFunction], knots: np.ndarray) -> np.ndarray:
        """Functional applied to ``column`` shifted to each knot."""
        if self.is_pointwise:
            out = np.zeros(knots.size)
            for w, c, t in self.samplings:
                h = linear_combination(column, c)
                out += w * h.evaluate_many(t - knots)
            return out
        f = column[self.dim]
        return np.array([_integrate_gf(f, self, shift=x) for x in knots])

    def to_dict(self) -> dict:
        if self.kind == "sampling":
            _, c, t = self.samplings[0]
            return {"kind": "sampling", "c": list(c), "t": t}
        if self.kind == "weighted_sum":
            return {"kind": "weighted_sum", "terms": [{"w": w, "c": list(c), "t": t} for w, c, t in self.samplings]}
        return {"kind": "quadrature", "dim": self.dim, "window": list(self.window), "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, data: dict) -> "MeasurementFunctional":
        kind = data["kind"]
        if kind == "sampling":
            return cls.sampling(data["c"], data["t"])
        if kind == "weighted_sum":
            return cls.weighted_sum([(d["w"], d["c"], d["t"]) for d in data["terms"]])
        if kind == "quadrature":
            return cls.quadrature(data["dim"], data["window"], data.get("weights", (1.0, 1.0)))
        raise ValueError(f"unknown measurement kind {kind!r}")

    def describe(self) -> str:
        if self.kind == "quadrature":
            return f"int_{self.window[0]:g}^{self.window[1]:g} w(t) f_{self.dim}(t) dt"
        return " + ".join(f"{w:g}*{list(c)}.f({t:g})" for w, c, t in self.samplings)


def _simpson(f, a: float, b: float, n: int) -> float:
    x = np.linspace(a, b, 2 * n + 1)
    y = f(x)
    h = (b - a) / (2 * n)
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def _integrate_gf(f: GeneralizedFunction, nu: MeasurementFunctional, shift: float = 0.0) -> float:
    """``int_a^b w(t) f(t - shift) dt`` by composite Simpson split at every breakpoint."""
    if f.diracs:
        raise AdmissibilityError("quadrature functional touches an entry with Dirac components")
    a, b = nu.window
    nodes = np.linspace(a, b, len(nu.weights))
    cuts = {a, b}
    cuts.update(float(x) for x in nodes)
    cuts.update(x + shift for x in f.breakpoints() if a < x + shift < b)
    cuts = sorted(cuts)

    def integrand(t):
        return nu.weight_function(t) * f.evaluate_many(t - shift)

    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        # keep samples off the right-continuous boundary by nudging inward
        eps = 1e-13 * max(1.0, abs(lo), abs(hi))

        def g(t, lo=lo, hi=hi):
            return integrand(np.clip(t, lo + eps, hi - eps))

        n = 8
        prev = _simpson(g, lo, hi, n)
        for _ in range(16):
            n *= 2
            cur = _simpson(g, lo, hi, n)
            if abs(cur - prev) <= QUAD_RTOL * max(abs(cur), 1e-300) or abs(cur - prev) <= 1e-15 * (hi - lo):
                break
            prev = cur
        else:
            raise QuadratureError(f"Simpson refinement did not reach rtol {QUAD_RTOL} on [{lo}, {hi}]")
        total += cur
    return total


@dataclass(frozen=True)
class Grid:
    """Uniform knot grid ``start + k * step`` for ``k < count``."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.step)) or self.step <= 0:
            raise ValueError("grid step must be positive and finite")
        if int(self.count) < 1:
            raise ValueError("grid needs at least one knot")
        object.__setattr__(self, "count", int(self.count))

    @property
    def knots(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @classmethod
    def spanning(cls, a: float, b: float, step: float) -> "Grid":
        """Grid from ``a`` with the given step covering ``[a, b]``."""
        return cls(a, step, int(np.floor((b - a) / step + 1e-9)) + 1)

    def to_dict(self) -> dict:
        return {"start": self.start, "step": self.step, "count": self.count}

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        if "count" in data and "stop" in data:
            raise ValueError("duplicate grid specification: give either count or stop, not both")
        if "stop" in data:
            return cls.spanning(data["start"], data["stop"], data["step"])
        return cls(data["start"], data["step"], data["count"])


@dataclass
class AdmissibilityReport:
    passed: bool
    offending: list = field(default_factory=list)  # (description, column, regularity)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "offending": [list(o) for o in self.offending]}


def admissibility_check(G: GreensMatrix, nu: MeasurementFunctional) -> AdmissibilityReport:
    """Check that ``nu`` acts on every dictionary column through a regular enough function.

    Samplings need each combination ``sum_d c_d G[d, j]`` to be continuous
    (regularity >= 0); quadratures need the touched row to be locally bounded.
    """
    rows, cols = G.shape
    offending = []
    if nu.is_pointwise:
        for _, c, t in nu.samplings:
            if len(c) != rows:
                raise ValueError(f"sampling vector has length {len(c)}, expected {rows}")
            for j in range(cols):
                h = linear_combination(G.column(j), c)
                r = gf_regularity(h)
                if r < 0:
                    offending.append((f"c={list(c)} at t={t:g}", j, r))
    else:
        if not 0 <= nu.dim < rows:
            raise ValueError(f"quadrature dimension {nu.dim} outside [0, {rows})")
        for j in range(cols):
            r = gf_regularity(G[nu.dim, j])
            if r < -1:
                offending.append((f"row {nu.dim}", j, r))
    return AdmissibilityReport(not offending, offending)


@dataclass
class InjectivityReport:
    passed: bool
    rank: int
    N: int
    singular_values: list

    def to_dict(self) -> dict:
        return {"passed": self.passed, "rank": self.rank, "N": self.N, "singular_values": self.singular_values}


def nullspace_injectivity_check(B, rtol: float = 1e-10) -> InjectivityReport:
    """Numerical rank of ``B`` against its column count."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    N = B.shape[1]
    if N == 0:
        return InjectivityReport(True, 0, 0, [])
    s = np.linalg.svd(B, compute_uv=False)
    rank = 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > rtol * s[0]))
    return InjectivityReport(rank == N, rank, N, [float(v) for v in s])


@dataclass
class SystemMatrices:
    """Discretized forward operator.

    ``A[:, k * D_ctrl + d]`` holds the responses to dictionary column ``d``
    shifted to knot ``k``; ``B`` holds the responses to the null-space basis.
    """

    A: np.ndarray
    B: np.ndarray
    grid: Grid
    D_ctrl: int
    dictionary: GreensMatrix
    basis: NullspaceBasis
    functionals: tuple = ()

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.B.shape[1]

    def group_view(self, a: np.ndarray) -> np.ndarray:
        """Coefficient vector as a ``(K_grid, D_ctrl)`` block."""
        return np.asarray(a).reshape(self.grid.count, self.D_ctrl)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.A).tobytes())
        h.update(np.ascontiguousarray(self.B).tobytes())
        return h.hexdigest()

    def joint_rank(self) -> int:
        M = np.hstack([self.A, self.B])
        s = np.linalg.svd(M, compute_uv=False)
        return 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > 1e-10 * s[0]))


def build_system(G: GreensMatrix, basis: NullspaceBasis, nus: Sequence[MeasurementFunctional], grid: Grid,
                 mode: str = "full", Qdagger=None, check_injectivity: bool = True) -> SystemMatrices:
    """Assemble ``A`` and ``B`` for the grid discretization of the forward model.

    Parameters
    ----------
    mode : {'full', 'q_reduced'}
        In ``'q_reduced'`` mode the dictionary is ``G @ Qdagger``.
    """
    if mode == "full":
        dictionary = G
    elif mode == "q_reduced":
        if Qdagger is None:
            raise ValueError("q_reduced mode requires Qdagger")
        dictionary = G.times_constant(np.atleast_2d(np.asarray(Qdagger, dtype=float)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for i, nu in enumerate(nus):
        rep = admissibility_check(dictionary, nu)
        if not rep.passed:
            raise AdmissibilityError(f"measurement {i} ({nu.describe()}) is not admissible: {rep.offending}")
    Dc = dictionary.shape[1]
    knots = grid.knots
    M = len(nus)
    A = np.zeros((M, grid.count * Dc))
    for m, nu in enumerate(nus):
        for d in range(Dc):
            A[m, d::Dc] = nu.responses(dictionary.column(d), knots)
    B = np.zeros((M, basis.size))
    for m, nu in enumerate(nus):
        for n, vec in enumerate(basis.basis):
            B[m, n] = nu.apply(vec)
    if check_injectivity and basis.size:
        rep = nullspace_injectivity_check(B)
        if not rep.passed:
            raise AssumptionError(
                f"measurements are not injective on the null space: rank {rep.rank} < N = {rep.N}"
            )
    return SystemMatrices(A, B, grid, Dc, dictionary, basis, tuple(nus))


@dataclass
class LSpline:
    """``f = dictionary * m + sum_n q_n basis_n``."""

    dictionary: GreensMatrix
    basis: NullspaceBasis
    atoms: VectorAtomicMeasure
    q: np.ndarray

    def components(self) -> tuple:
        rows, cols = self.dictionary.shape
        if self.atoms.dim != cols:
            raise ValueError(f"measure has dimension {self.atoms.dim}, dictionary has {cols} columns")
        per_dim = self.atoms.outer_view()
        out = []
        for r in range(rows):
            parts = [gf_convolve_atoms(self.dictionary[r, d], per_dim[d]) for d in range(cols) if per_dim[d]]
            parts += [vec[r] for vec in self.basis.basis]
            weights = [1.0] * (len(parts) - self.basis.size) + [float(v) for v in self.q]
            out.append(linear_combination(parts, weights))
        return tuple(out)

    def evaluate(self, t) -> np.ndarray:
        """Array of shape ``(len(t), D)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([f.evaluate_many(t) for f in self.components()])


def simulate_data(ground_truth, G: GreensMatrix, basis: NullspaceBasis, nus: Sequence[MeasurementFunctional],
                  noise_sigma: float = 0.0, seed: int | None = None) -> np.ndarray:
    """Exact measurements of the ground-truth spline plus seeded Gaussian noise.

    Parameters
    ----------
    ground_truth : (VectorAtomicMeasure, array_like)
        Innovation atoms (dimension indices refer to columns of ``G``) and
        null-space coefficients.
    """
    atoms, q = ground_truth
    q = np.zeros(basis.size) if q is None else np.asarray(q, dtype=float)
    if q.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} null-space coefficients, got {q.shape}")
    for i, nu in enumerate(nus):
        rep = admissibility_check(G, nu)
        if not rep.passed:
            raise AdmissibilityError(f"measurement {i} ({nu.describe()}) is not admissible: {rep.offending}")
    f = LSpline(G, basis, atoms, q).components()
    y = np.array([nu.apply(f) for nu in nus])
    if noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, size=y.shape)
    return y
