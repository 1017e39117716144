"""Matrix differential operators and their Green's matrices.

The causal Green's matrix of an invertible operator ``L`` is obtained from
the adjugate identity ``L adj(L) = det(L) I``: every entry is the adjugate
entry applied to the scalar causal Green's function of ``det(L)``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg

from .exceptions import AssumptionError, NonInvertibleError, NullspaceError, VerificationError
from .genfunc import (
    DEFAULT_REGULARITY_CAP,
    GeneralizedFunction,
    gf_apply_odo,
    gf_regularity,
    gf_reverse,
    linear_combination,
)
from .odo import OdoPoly, causal_green_scalar, cluster_roots, odo_adjoint, odo_roots

__all__ = [
    "MatrixOperator",
    "GreensMatrix",
    "NullspaceBasis",
    "VerificationReport",
    "mdo_det",
    "mdo_adjugate",
    "mdo_adjoint",
    "greens_matrix",
    "greens_verify",
    "greens_adjoint",
    "nullspace_basis",
    "regularity_bound",
    "regularity_table",
    "firstorder_greens",
    "controllability_rank",
    "constant_smith",
]

DET_RTOL = 1e-11
VERIFY_TOL = 1e-8


class MatrixOperator:
    """A rows x cols array of :class:`OdoPoly` entries (immutable)."""

    def __init__(self, entries):
        rows = [tuple(OdoPoly.from_any(e) for e in row) for row in entries]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("operator entries must form a non-empty rectangular array")
        self.entries = tuple(rows)
        self.rows = len(rows)
        self.cols = len(rows[0])
        self._det = None
        self._adj = None

    # -- constructors ---------------------------------------------------------
    @classmethod
    def from_coeffs(cls, nested) -> "MatrixOperator":
        return cls([[OdoPoly(tuple(c)) for c in row] for row in nested])

    @classmethod
    def diagonal(cls, diag: Sequence) -> "MatrixOperator":
        n = len(diag)
        return cls([[OdoPoly.from_any(diag[i]) if i == j else OdoPoly() for j in range(n)] for i in range(n)])

    @classmethod
    def identity(cls, dim: int) -> "MatrixOperator":
        return cls.diagonal([1.0] * dim)

    @classmethod
    def first_order(cls, A) -> "MatrixOperator":
        """``I D - A``."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        return cls([[OdoPoly((-A[i, j], 1.0 if i == j else 0.0)) for j in range(n)] for i in range(n)])

    # -- structure -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.rows

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def __getitem__(self, idx) -> OdoPoly:
        r, c = idx
        return self.entries[r][c]

    def orders(self) -> np.ndarray:
        return np.array([[e.degree for e in row] for row in self.entries])

    def det(self) -> OdoPoly:
        if self._det is None:
            self._det = mdo_det(self)
        return self._det

    def adjugate(self) -> "MatrixOperator":
        if self._adj is None:
            self._adj = mdo_adjugate(self)
        return self._adj

    def adjoint(self) -> "MatrixOperator":
        return mdo_adjoint(self)

    def left_multiply(self, M) -> "MatrixOperator":
        """Constant matrix times operator, ``M L``."""
        M = np.asarray(M, dtype=float)
        out = []
        for r in range(M.shape[0]):
            row = []
            for c in range(self.cols):
                acc = OdoPoly()
                for j in range(self.rows):
                    if M[r, j] != 0:
                        acc = acc + self.entries[j][c] * M[r, j]
                row.append(acc)
            out.append(row)
        return MatrixOperator(out)

    def compose(self, other: "MatrixOperator") -> "MatrixOperator":
        if self.cols != other.rows:
            raise ValueError("inner dimensions do not match")
        out = []
        for r in range(self.rows):
            row = []
            for c in range(other.cols):
                acc = OdoPoly()
                for j in range(self.cols):
                    acc = acc + self.entries[r][j] * other.entries[j][c]
                row.append(acc)
            out.append(row)
        return MatrixOperator(out)

    def apply(self, vec: Sequence[GeneralizedFunction]) -> tuple:
        """Apply to a vector of generalized functions."""
        if len(vec) != self.cols:
            raise ValueError("vector length does not match operator columns")
        out = []
        for r in range(self.rows):
            pieces, diracs = [], []
            for c in range(self.cols):
                if self.entries[r][c].is_zero or vec[c].is_zero:
                    continue
                p, d = gf_apply_odo(self.entries[r][c], vec[c])._raw()
                pieces += p
                diracs += d
            out.append(GeneralizedFunction(pieces, diracs))
        return tuple(out)

    def to_dict(self) -> dict:
        return {"dim": self.rows, "entries": [[e.to_list() for e in row] for row in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> "MatrixOperator":
        op = cls.from_coeffs(data["entries"])
        if "dim" in data and data["dim"] != op.rows:
            raise ValueError(f"dim={data['dim']} does not match {op.rows} rows")
        return op

    def __eq__(self, other):
        return isinstance(other, MatrixOperator) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        return f"MatrixOperator({[[e.to_list() for e in row] for row in self.entries]})"


# -- determinant and adjugate --------------------------------------------------

def _pmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size == 0 or b.size == 0:
        return np.zeros(0)
    return np.convolve(a, b)


def _padd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = max(a.size, b.size)
    out = np.zeros(n)
    out[: a.size] += a
    out[: b.size] += b
    return out


def _det_permutation(P, Pabs):
    n = len(P)
    det = np.zeros(0)
    scale = np.zeros(0)
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        term = np.ones(1)
        tabs = np.ones(1)
        for i in range(n):
            term = _pmul(term, P[i][perm[i]])
            tabs = _pmul(tabs, Pabs[i][perm[i]])
        det = _padd(det, -term if inv % 2 else term)
        scale = _padd(scale, tabs)
    return det, scale


def _det_laplace(P, Pabs):
    n = len(P)

    @lru_cache(maxsize=None)
    def minor(cols: frozenset):
        row = n - len(cols)
        if not cols:
            return np.ones(1), np.ones(1)
        det = np.zeros(0)
        scale = np.zeros(0)
        for pos, c in enumerate(sorted(cols)):
            if P[row][c].size == 0:
                continue
            sub, subabs = minor(cols - {c})
            term = _pmul(P[row][c], sub)
            det = _padd(det, -term if pos % 2 else term)
            scale = _padd(scale, _pmul(Pabs[row][c], subabs))
        return det, scale

    return minor(frozenset(range(n)))


def _clean_det(entries) -> OdoPoly:
    P = [[np.array(e.coeffs, dtype=float) for e in row] for row in entries]
    Pabs = [[np.abs(p) for p in row] for row in P]
    n = len(P)
    if n == 0:
        return OdoPoly((1.0,))
    if n <= 4:
        det, scale = _det_permutation(P, Pabs)
    elif n <= 8:
        det, scale = _det_laplace(P, Pabs)
    else:
        raise ValueError("determinant expansion supports at most 8x8 operators")
    det = np.where(np.abs(det) <= DET_RTOL * scale, 0.0, det)
    return OdoPoly(tuple(det))


def mdo_det(L: MatrixOperator) -> OdoPoly:
    """Determinant over the operator ring.

    Coefficients that cancel to round-off relative to the matching
    coefficient of the absolute-value permanent are set to exactly zero.
    """
    if not L.is_square:
        raise ValueError(f"determinant of a non-square {L.rows}x{L.cols} operator")
    return _clean_det(L.entries)


def mdo_adjugate(L: MatrixOperator) -> MatrixOperator:
    """Transpose of the cofactor matrix: ``adj[r][c] = (-1)^(r+c) det(L without row c, col r)``."""
    if not L.is_square:
        raise ValueError(f"adjugate of a non-square {L.rows}x{L.cols} operator")
    n = L.rows
    if n == 1:
        return MatrixOperator([[OdoPoly((1.0,))]])
    out = [[None] * n for _ in range(n)]
    for r in range(n):
        for c in range(n):
            sub = [[L.entries[i][j] for j in range(n) if j != r] for i in range(n) if i != c]
            m = _clean_det(sub)
            out[r][c] = -m if (r + c) % 2 else m
    return MatrixOperator(out)


def mdo_adjoint(L: MatrixOperator) -> MatrixOperator:
    """Formal adjoint ``[L*]_{r,c} = (L_{c,r})*``."""
    return MatrixOperator([[odo_adjoint(L.entries[c][r]) for c in range(L.rows)] for r in range(L.cols)])


# -- Green's matrices ------------------------------------------------------------

@dataclass(frozen=True)
class GreensMatrix:
    dim: int
    entries: tuple  # D x D tuple of GeneralizedFunction
    det_op: OdoPoly
    nullspace_dim: int

    def __getitem__(self, idx) -> GeneralizedFunction:
        r, c = idx
        return self.entries[r][c]

    @property
    def shape(self) -> tuple:
        return len(self.entries), len(self.entries[0])

    def evaluate(self, t) -> np.ndarray:
        """Sample every entry; returns an array of shape ``(len(t), rows, cols)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        rows, cols = self.shape
        out = np.empty((t.size, rows, cols))
        for r in range(rows):
            for c in range(cols):
                out[:, r, c] = self.entries[r][c].evaluate_many(t)
        return out

    def column(self, c: int) -> tuple:
        return tuple(row[c] for row in self.entries)

    def times_constant(self, M) -> "GreensMatrix":
        """Right multiplication by a constant matrix, ``G M``."""
        M = np.asarray(M, dtype=float)
        rows, cols = self.shape
        if M.shape[0] != cols:
            raise ValueError("constant matrix has incompatible shape")
        entries = tuple(
            tuple(linear_combination(self.entries[r], M[:, c]) for c in range(M.shape[1])) for r in range(rows)
        )
        return GreensMatrix(self.dim, entries, self.det_op, self.nullspace_dim)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "det": self.det_op.to_list(),
            "nullspace_dim": self.nullspace_dim,
            "entries": [[e.to_dict() for e in row] for row in self.entries],
            "descriptions": [[e.describe() for e in row] for row in self.entries],
        }

    def to_csv(self, path, start: float, stop: float, count: int) -> None:
        """Rows ``t, r, c, value`` on a uniform grid (Dirac entries are skipped)."""
        ts = np.linspace(start, stop, count)
        rows, cols = self.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "r", "c", "value"])
            for r in range(rows):
                for c in range(cols):
                    e = self.entries[r][c]
                    if e.diracs:
                        continue
                    for t, v in zip(ts, e.evaluate_many(ts)):
                        w.writerow([repr(float(t)), r, c, repr(float(v))])


@dataclass
class VerificationReport:
    passed: bool
    smooth_residual: float
    dirac_deviation: float
    residuals: list = field(default_factory=list)  # per entry (smooth, dirac)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "smooth_residual": self.smooth_residual,
            "dirac_deviation": self.dirac_deviation,
        }


def greens_verify(L: MatrixOperator, G: GreensMatrix, tol: float = VERIFY_TOL) -> VerificationReport:
    """Apply ``L`` symbolically to ``G`` and compare against ``I delta``."""
    rows, cols = G.shape
    if L.cols != rows or L.rows != cols:
        raise ValueError("operator and Green's matrix dimensions do not match")
    smooth = 0.0
    dev = 0.0
    per = []
    for c in range(cols):
        out = L.apply(G.column(c))
        row_res = []
        for r, f in enumerate(out):
            s = f.max_smooth_coeff()
            target_seen = False
            d = 0.0
            for x, n, w in f.diracs:
                if r == c and n == 0 and abs(x) <= 1e-12:
                    d = max(d, abs(w - 1.0))
                    target_seen = True
                else:
                    d = max(d, abs(w))
            if r == c and not target_seen:
                d = max(d, 1.0)
            smooth = max(smooth, s)
            dev = max(dev, d)
            row_res.append((s, d))
        per.append(row_res)
    per = [list(x) for x in zip(*per)]
    return VerificationReport(smooth <= tol and dev <= tol, smooth, dev, per)


def greens_matrix(L: MatrixOperator, verify: bool = True, cluster_tol: float | None = None) -> GreensMatrix:
    """Unique causal Green's matrix ``adj(L) g_det(L)``."""
    if not L.is_square:
        raise ValueError("Green's matrix requires a square operator")
    det = L.det()
    if det.is_zero:
        raise NonInvertibleError("non-invertible MDO: det(L) = 0")
    g = causal_green_scalar(det, cluster_tol)
    adj = L.adjugate()
    entries = tuple(tuple(gf_apply_odo(adj[r, c], g) for c in range(L.cols)) for r in range(L.rows))
    G = GreensMatrix(L.rows, entries, det, det.degree)
    if verify:
        rep = greens_verify(L, G)
        if not rep.passed:
            raise VerificationError(
                f"Green's matrix verification failed: smooth residual {rep.smooth_residual:.3g}, "
                f"Dirac deviation {rep.dirac_deviation:.3g}",
                rep,
            )
    return G


def greens_adjoint(G: GreensMatrix) -> GreensMatrix:
    """``G^T(-t)``: the anti-causal Green's matrix of the adjoint operator."""
    rows, cols = G.shape
    entries = tuple(tuple(gf_reverse(G.entries[c][r]) for c in range(rows)) for r in range(cols))
    return GreensMatrix(G.dim, entries, odo_adjoint(G.det_op), G.nullspace_dim)


def regularity_table(G: GreensMatrix, cap: int = DEFAULT_REGULARITY_CAP) -> list:
    return [[gf_regularity(e, cap) for e in row] for row in G.entries]


def regularity_bound(L: MatrixOperator) -> list | None:
    """A-priori regularity lower bounds for the entries of ``G_L``.

    Returns ``None`` when the dominance hypothesis fails.  Entry ``(r, c)`` is
    ``N_{c,r} - 2`` for ``N_{c,r} >= 2``, ``-1`` for ``N_{c,r} = 1`` and ``None``
    (no bound) when ``L_{c,r}`` has order 0 or vanishes.
    """
    N = L.orders()
    D = L.rows
    for d in range(D):
        others = [e for e in range(D) if e != d]
        row_ok = all(N[d, e] < N[d, d] for e in others)
        col_ok = all(N[e, d] < N[d, d] for e in others)
        if not (row_ok or col_ok):
            return None
    out = []
    for r in range(D):
        row = []
        for c in range(D):
            n = int(N[c, r])
            row.append(n - 2 if n >= 2 else (-1 if n == 1 else None))
        out.append(row)
    return out


# -- null space -------------------------------------------------------------------

@dataclass(frozen=True)
class NullspaceBasis:
    dim_ambient: int
    basis: tuple  # N vectors, each a tuple of dim_ambient GeneralizedFunction
    residual: float = 0.0
    min_singular: float = 0.0

    @property
    def size(self) -> int:
        return len(self.basis)

    def evaluate(self, t) -> np.ndarray:
        """Array of shape ``(len(t), D, N)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.dim_ambient, self.size))
        for n, vec in enumerate(self.basis):
            for d, f in enumerate(vec):
                out[:, d, n] = f.evaluate_many(t)
        return out

    def to_dict(self) -> dict:
        return {
            "dim_ambient": self.dim_ambient,
            "size": self.size,
            "basis": [[f.to_dict() for f in vec] for vec in self.basis],
        }


def _scalar_null_functions(det: OdoPoly) -> list[GeneralizedFunction]:
    """Real basis ``t^j e^{alpha t}`` (two-sided) of the scalar null space of ``det``."""
    out = []
    for alpha, m in odo_roots(det).roots:
        for j in range(m):
            if alpha.imag == 0:
                out.append(GeneralizedFunction([(0.0, 0, [(alpha, j, 1.0)])]))
            elif alpha.imag > 0:
                out.append(GeneralizedFunction([(0.0, 0, [(alpha, j, 0.5), (alpha.conjugate(), j, 0.5)])]))
                out.append(GeneralizedFunction([(0.0, 0, [(alpha, j, -0.5j), (alpha.conjugate(), j, 0.5j)])]))
    return out


def nullspace_basis(L: MatrixOperator, n_grid: int = 200) -> NullspaceBasis:
    """Basis of ``{q : L q = 0}`` from adjugate images of the scalar null space of ``det(L)``.

    Candidates are sampled on a fixed grid, the best-conditioned ``deg det(L)``
    of them are selected by column-pivoted QR and orthonormalized on the grid;
    each returned element is then checked by applying ``L`` symbolically.
    """
    det = L.det()
    if det.is_zero:
        raise NonInvertibleError("non-invertible MDO: det(L) = 0")
    D = L.rows
    N = det.degree
    if N == 0:
        return NullspaceBasis(D, (), 0.0, math.inf)
    rho = max(abs(a) for a, _ in odo_roots(det).roots)
    half = 1.0 / max(1.0, rho / 2.0)
    grid = np.linspace(-half, half, n_grid)
    adj = L.adjugate()
    candidates = []
    for phi in _scalar_null_functions(det):
        for c in range(D):
            vec = tuple(gf_apply_odo(adj[r, c], phi) for r in range(D))
            if all(v.is_zero for v in vec):
                continue
            candidates.append(vec)
    if not candidates:
        raise NullspaceError("nullspace extraction failed: every adjugate image vanishes")
    S = np.column_stack([np.concatenate([f.evaluate_many(grid) for f in vec]) for vec in candidates])
    norms = np.linalg.norm(S, axis=0)
    keep = norms > 1e-12 * norms.max()
    candidates = [c for c, k in zip(candidates, keep) if k]
    S = S[:, keep] / norms[keep]
    _, R, piv = scipy.linalg.qr(S, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-8 * diag[0]))
    if rank < N:
        raise NullspaceError(
            f"nullspace extraction failed: found {rank} independent candidates, expected {N} "
            f"(pivot magnitudes {diag[: N + 1]})"
        )
    sel = piv[:N]
    _, Rs = np.linalg.qr(S[:, sel])
    W = np.linalg.inv(Rs) * math.sqrt(n_grid)
    W = W / norms[keep][sel][:, None]
    basis = []
    for n in range(N):
        vec = tuple(linear_combination([candidates[k][d] for k in sel], W[:, n]) for d in range(D))
        basis.append(vec)
    # a-posteriori certification
    residual = 0.0
    samples = []
    for vec in basis:
        vals = np.concatenate([f.evaluate_many(grid) for f in vec])
        samples.append(vals)
        scale = max(1.0, np.abs(vals).max())
        out = L.apply(vec)
        res = max(np.abs(f.evaluate_many(grid)).max() if not f.is_zero else 0.0 for f in out)
        if any(f.diracs for f in out):
            res = math.inf
        residual = max(residual, res / scale)
    Smat = np.column_stack(samples)
    Smat = Smat / np.linalg.norm(Smat, axis=0)
    smin = np.linalg.svd(Smat, compute_uv=False).min()
    if residual > 1e-8 or smin <= 1e-8:
        raise NullspaceError(
            f"nullspace extraction failed: residual {residual:.3g}, smallest singular value {smin:.3g}"
        )
    return NullspaceBasis(D, tuple(basis), residual, float(smin))


# -- first-order systems ------------------------------------------------------------

def _integrate_causal(lam: complex, terms: dict) -> dict:
    """Terms of ``int_0^t e^{lam (t-s)} r(s) ds`` for ``r = sum c s^j e^{alpha s}``."""
    out: dict = {}

    def add(a, j, c):
        out[(a, j)] = out.get((a, j), 0) + c

    for (alpha, j), c in terms.items():
        beta = alpha - lam
        if beta == 0:
            add(lam, j + 1, c / (j + 1))
            continue
        fj = math.factorial(j)
        for i in range(j + 1):
            add(alpha, j - i, c * (-1) ** i * (fj // math.factorial(j - i)) / beta ** (i + 1))
        add(lam, 0, -c * (-1) ** j * fj / beta ** (j + 1))
    return out


def firstorder_greens(A) -> GreensMatrix:
    """``u(t) e^{At}`` in exponential-polynomial form via Putzer's recurrence."""
    A = np.asarray(A, dtype=float)
    D = A.shape[0]
    L = MatrixOperator.first_order(A)
    det = L.det()
    eig = [lam for lam, m in cluster_roots(np.linalg.eigvals(A), poly=det) for _ in range(m)]
    P = np.eye(D, dtype=complex)
    r = {(eig[0], 0): 1.0 + 0j}
    acc = [[[] for _ in range(D)] for _ in range(D)]
    for k in range(D):
        if k > 0:
            P = P @ (A - eig[k - 1] * np.eye(D))
            r = _integrate_causal(eig[k], r)
        for i in range(D):
            for j in range(D):
                if P[i, j] != 0:
                    acc[i][j].extend((a, p, c * P[i, j]) for (a, p), c in r.items())
    entries = tuple(tuple(GeneralizedFunction([(0.0, 1, acc[i][j])]) for j in range(D)) for i in range(D))
    return GreensMatrix(D, entries, det, det.degree)


def controllability_rank(A, P, rtol: float = 1e-10) -> int:
    """Numerical rank of the Kalman matrix ``[P, AP, ..., A^{D-1} P]``."""
    A = np.asarray(A, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    blocks = [P]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    K = np.hstack(blocks)
    s = np.linalg.svd(K, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def constant_smith(Q, rtol: float = 1e-12):
    """Factor a full-row-rank ``Q = S [I 0] T`` and return ``(S, A, T, Q_dagger)``.

    Gaussian elimination with column pivoting; ``Q_dagger = T^{-1} A^T S^{-1}``
    is a right inverse of ``Q``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Dp, D = Q.shape
    s = np.linalg.svd(Q, compute_uv=False)
    if Dp > D or s.size < Dp or s[-1] <= rtol * max(1.0, s[0]) * max(Dp, D):
        raise AssumptionError("Q is not full row rank; the reduced problem needs a right inverse")
    Pm, Lm, U = scipy.linalg.lu(Q.T)  # Q^T = Pm Lm U, Lm is D x D', U is D' x D'
    L1 = Lm[:Dp, :]
    L2 = Lm[Dp:, :]
    S = U.T @ L1.T
    X = np.linalg.solve(L1.T, L2.T) if D > Dp else np.zeros((Dp, 0))
    T0 = np.eye(D)
    T0[:Dp, Dp:] = X
    T = T0 @ Pm.T
    Aform = np.hstack([np.eye(Dp), np.zeros((Dp, D - Dp))])
    Qdag = np.linalg.solve(T, Aform.T) @ np.linalg.inv(S)
    return S, Aform, T, Qdag
