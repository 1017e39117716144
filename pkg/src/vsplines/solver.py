"""FISTA solver for the grid-discretized TV-regularized inverse problem.

The problem is ``min_{a, q} E(y, A a + B q) + lam * R(a)`` where ``R`` is an
inner or outer norm on the ``(K_grid, D_ctrl)`` coefficient block and the
null-space coefficients ``q`` are unpenalized.  After the proximal-gradient
phase an optional active-set Newton polish solves the problem restricted to
the detected support; optimality is certified by the dual certificate.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import SolverDivergenceError
from .forward import LSpline, SystemMatrices
from .norms import NormSpec, VectorAtomicMeasure
from .prox import group_dual_values, prox, regularizer_dual, regularizer_value

__all__ = [
    "SquaredLoss",
    "SolveConfig",
    "CertificateReport",
    "SparsityAudit",
    "SolveResult",
    "lipschitz_estimate",
    "lambda_max",
    "fista_solve",
    "dual_certificate",
    "trim_and_audit",
]

logger = logging.getLogger(__name__)

ACTIVE_SLACK = 1e-4


class SquaredLoss:
    """``E(y, p) = 1/2 ||y - p||^2``."""

    lipschitz = 1.0
    name = "squared"

    def value(self, pred, y) -> float:
        r = y - pred
        return 0.5 * float(r @ r)

    def gradient(self, pred, y) -> np.ndarray:
        return pred - y


@dataclass
class SolveConfig:
    """Solver settings.

    Parameters
    ----------
    lam : float
        Regularization weight, strictly positive.
    norm : NormSpec
        Regularizer on the coefficient block.
    max_iters : int
        Budget of proximal-gradient iterations.
    rel_tol : float
        Stop when the relative objective change falls below this value.
    restart : bool
        Adaptive restart (and a plain step) whenever the objective increases.
    trim_threshold : float
        Groups below this fraction of the largest group norm are discarded.
    certificate_tol : float
        Slack allowed in the dual certificate.
    polish : bool
        Run the active-set Newton polish (squared loss and smooth norms only).
    """

    lam: float
    norm: NormSpec = field(default_factory=NormSpec)
    max_iters: int = 20000
    rel_tol: float = 1e-12
    restart: bool = True
    trim_threshold: float = 1e-6
    certificate_tol: float = 1e-6
    polish: bool = True
    check_every: int = 50
    working_set: bool = True
    working_set_growth: int = 5
    inner_iters: int = 2000
    loss: object = field(default_factory=SquaredLoss)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "norm": self.norm.to_dict(),
            "max_iters": self.max_iters,
            "rel_tol": self.rel_tol,
            "restart": self.restart,
            "trim_threshold": self.trim_threshold,
            "certificate_tol": self.certificate_tol,
            "polish": self.polish,
            "working_set": self.working_set,
        }


@dataclass
class CertificateReport:
    value: float
    nullspace_residual: float
    active_min: float
    passed: bool
    group_values: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "dual_norm_value": self.value,
            "nullspace_residual": self.nullspace_residual,
            "active_min": self.active_min,
            "passed": self.passed,
        }


@dataclass
class SparsityAudit:
    K: int
    M: int
    N: int
    bound: int
    parameter_count: int
    parameter_count_observed: int
    knot_sharing_fraction: float

    @property
    def within_bound(self) -> bool:
        return self.K <= self.bound

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "M": self.M,
            "N": self.N,
            "bound": self.bound,
            "within_bound": self.within_bound,
            "status": "extreme-point size" if self.within_bound else "non-extreme minimizer",
            "parameter_count": self.parameter_count,
            "parameter_count_observed": self.parameter_count_observed,
            "knot_sharing_fraction": self.knot_sharing_fraction,
        }


@dataclass
class SolveResult:
    atoms: VectorAtomicMeasure
    q: np.ndarray
    objective: float
    certificate: CertificateReport
    iterations: int
    audit: SparsityAudit | None
    coefficients: np.ndarray  # raw grid block (K_grid, D_ctrl)
    lam: float
    norm: NormSpec
    converged: bool
    history: list = field(default_factory=list, repr=False)
    polished: bool = False

    def spline(self, mats: SystemMatrices) -> LSpline:
        return LSpline(mats.dictionary, mats.basis, self.atoms, self.q)

    def reconstruct(self, mats: SystemMatrices, t) -> np.ndarray:
        return self.spline(mats).evaluate(t)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "norm": self.norm.to_dict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "polished": self.polished,
            "objective": self.objective,
            "atoms": self.atoms.to_list(),
            "q": [float(v) for v in self.q],
            "certificate": self.certificate.to_dict(),
            "audit": None if self.audit is None else self.audit.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- helpers -----------------------------------------------------------------

def lipschitz_estimate(A: np.ndarray, B: np.ndarray, iters: int = 30, margin: float = 1.05) -> float:
    """``margin * sigma_max([A B])^2`` by power iteration from a fixed start."""
    C = np.hstack([A, B])
    if C.size == 0:
        return 1.0
    x = np.ones(C.shape[1]) / np.sqrt(C.shape[1])
    est = 0.0
    for _ in range(iters):
        v = C.T @ (C @ x)
        est = float(np.linalg.norm(v))
        if est == 0.0:
            return 1.0
        x = v / est
    return margin * est


def _least_squares_q(B: np.ndarray, y: np.ndarray) -> np.ndarray:
    if B.shape[1] == 0:
        return np.zeros(0)
    return np.linalg.lstsq(B, y, rcond=None)[0]


def lambda_max(mats: SystemMatrices, y, norm: NormSpec) -> float:
    """Smallest ``lam`` with ``a = 0`` optimal: ``||A^T (y - B q_ls)||_dual``."""
    y = np.asarray(y, dtype=float)
    r = y - mats.B @ _least_squares_q(mats.B, y)
    return regularizer_dual(mats.group_view(mats.A.T @ r), norm)


def dual_certificate(mats: SystemMatrices, y, a, q, lam: float, norm: NormSpec, tol: float = 1e-6,
                     loss=None) -> CertificateReport:
    """KKT audit of a candidate ``(a, q)``.

    ``eta = -A^T grad E / lam`` must have dual norm at most ``1 + tol``, the
    null-space gradient must vanish (relative to ``||y||``) and every active
    group must saturate its dual constraint within ``1e-4``.
    """
    loss = loss or SquaredLoss()
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float).ravel()
    q = np.asarray(q, dtype=float)
    g = -loss.gradient(mats.A @ a + mats.B @ q, y)
    eta = mats.group_view(mats.A.T @ g) / lam
    value = regularizer_dual(eta, norm)
    null_res = float(np.max(np.abs(mats.B.T @ g), initial=0.0))
    Z = mats.group_view(a)
    vals = group_dual_values(eta, norm)
    if norm.family == "inner":
        active = np.any(Z != 0, axis=1)
        active_min = float(np.min(vals[active], initial=1.0))
    else:
        # per active entry |eta| must reach its column maximum, and the total must reach one
        active_min = value if np.any(Z != 0) else 1.0
        for d in range(Z.shape[1]):
            nz = Z[:, d] != 0
            if np.any(nz) and vals[d] > 0:
                active_min = min(active_min, float(np.min(np.abs(eta[nz, d]))) / vals[d] * value)
    ynorm = float(np.linalg.norm(y))
    passed = value <= 1.0 + tol and null_res <= tol * max(ynorm, 1e-300) and active_min >= 1.0 - ACTIVE_SLACK
    if ynorm == 0.0:
        passed = value <= 1.0 + tol and null_res == 0.0 and active_min >= 1.0 - ACTIVE_SLACK
    return CertificateReport(float(value), null_res, float(active_min), bool(passed), vals)


def trim_and_audit(result: SolveResult, cfg: SolveConfig, M: int, N: int, grid=None) -> SolveResult:
    """Trim negligible groups, merge adjacent knots and recompute the sparsity audit."""
    Z = np.array(result.coefficients, dtype=float)
    K_grid, Dc = Z.shape
    spec = cfg.norm
    w = spec.weight_vector(Dc)
    if spec.family == "inner":
        norms = regularizer_rows(Z, spec)
        thr = cfg.trim_threshold * float(np.max(norms, initial=0.0))
        Z[norms <= thr] = 0.0
    else:
        mags = np.abs(Z) * w
        thr = cfg.trim_threshold * float(np.max(mags, initial=0.0))
        Z[mags <= thr] = 0.0
    knots = grid.knots if grid is not None else np.arange(K_grid, dtype=float)
    active = np.flatnonzero(np.any(Z != 0, axis=1))
    atoms = []
    locations = []
    run: list[int] = []

    def flush(run):
        if not run:
            return
        vec = Z[run].sum(axis=0)
        wts = regularizer_rows(Z[run], spec) if spec.family == "inner" else np.abs(Z[run]).sum(axis=1)
        x = float(np.dot(wts, knots[run]) / wts.sum()) if len(run) > 1 else float(knots[run[0]])
        locations.append(x)
        atoms.extend((x, d, float(vec[d])) for d in range(Dc) if vec[d] != 0)

    for k in active:
        if run and k != run[-1] + 1:
            flush(run)
            run = []
        run.append(int(k))
    flush(run)
    measure = VectorAtomicMeasure(Dc, atoms)
    _, amps = measure.inner_view()
    K = amps.shape[0]
    shared = int(np.sum(np.count_nonzero(amps, axis=1) >= 2)) if K else 0
    bound = M - N
    count = (M - N) * (Dc + 1) + N if spec.family == "inner" else (M - N) * 2 * Dc + N
    observed = K + int(np.count_nonzero(amps)) + N if spec.family == "inner" else 2 * int(np.count_nonzero(amps)) + N
    audit = SparsityAudit(K, M, N, bound, count, observed, float(shared / K) if K else 0.0)
    result.atoms = measure
    result.audit = audit
    return result


def regularizer_rows(Z: np.ndarray, spec: NormSpec) -> np.ndarray:
    """Base norm of every row (group norms for the inner family)."""
    w = spec.weight_vector(Z.shape[1])
    X = np.abs(Z) * w
    if spec.base == "l1":
        return X.sum(axis=1)
    if spec.base == "l2":
        return np.sqrt(np.sum(X * X, axis=1))
    return np.max(X, axis=1, initial=0.0)


# -- active-set Newton polish -----------------------------------------------------

def _reg_grad_hess(Z: np.ndarray, mask: np.ndarray, spec: NormSpec, signs: np.ndarray):
    """Value, gradient and Hessian of ``R`` restricted to the entries in ``mask``."""
    w = spec.weight_vector(Z.shape[1])
    idx = np.flatnonzero(mask.ravel())
    n = idx.size
    grad = np.zeros(n)
    H = np.zeros((n, n))
    flat = Z.ravel()
    Dc = Z.shape[1]
    dims = idx % Dc
    if spec.base == "l1":
        grad = w[dims] * signs.ravel()[idx]
        return float(np.sum(np.abs(flat[idx]) * w[dims])), grad, H
    if spec.family == "inner":
        value = 0.0
        rows = idx // Dc
        for k in np.unique(rows):
            sel = np.flatnonzero(rows == k)
            v = flat[idx[sel]]
            w2 = w[dims[sel]] ** 2
            nk = float(np.sqrt(np.sum(w2 * v * v)))
            value += nk
            u = w2 * v
            grad[sel] = u / nk
            H[np.ix_(sel, sel)] = np.diag(w2) / nk - np.outer(u, u) / nk**3
        return value, grad, H
    # outer l2: R = ||w * s||, s = J a with fixed signs
    J = np.zeros((Dc, n))
    J[dims, np.arange(n)] = signs.ravel()[idx]
    s = J @ flat[idx]
    w2 = w * w
    R = float(np.sqrt(np.sum(w2 * s * s)))
    if R == 0:
        return 0.0, grad, H
    u = w2 * s
    grad = J.T @ (u / R)
    H = J.T @ (np.diag(w2) / R - np.outer(u, u) / R**3) @ J
    return R, grad, H


def _polish(A: np.ndarray, B: np.ndarray, y, Z0: np.ndarray, q0: np.ndarray, lam: float, spec: NormSpec,
            max_newton: int = 100):
    """Newton's method on the support of ``Z0`` with support pruning.

    ``A`` holds the columns of the knots in ``Z0`` (knot-major order).
    Returns ``(Z, q)`` or ``None`` when no descent step can be taken.
    """
    K, Dc = Z0.shape
    Z = Z0.copy()
    q = q0.copy()
    group = spec.family == "inner" and spec.base == "l2"
    mask = np.repeat(np.any(Z != 0, axis=1)[:, None], Dc, axis=1) if group else Z != 0
    signs = np.sign(Z)
    w = spec.weight_vector(Dc)

    def objective(Zc, qc):
        r = y - A @ Zc.ravel() - B @ qc
        return 0.5 * float(r @ r) + lam * regularizer_value(Zc, spec)

    F = objective(Z, q)
    for _ in range(max_newton):
        idx = np.flatnonzero(mask.ravel())
        if idx.size == 0:
            return np.zeros_like(Z), _least_squares_q(B, y)
        C = np.hstack([A[:, idx], B])
        x = np.concatenate([Z.ravel()[idx], q])
        r = y - C @ x
        _, gR, HR = _reg_grad_hess(Z, mask, spec, signs)
        n = idx.size
        grad = -C.T @ r
        grad[:n] += lam * gR
        H = C.T @ C
        H[:n, :n] += lam * HR
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            step = -np.linalg.lstsq(H, grad, rcond=1e-15)[0]
        if not np.all(np.isfinite(step)):
            return None
        decrement = float(-grad @ step)
        if decrement <= 0:
            break
        tmax, crossing = 1.0, None
        if not group:
            xa, sa = x[:n], step[:n]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(xa * sa < 0, -xa / sa, np.inf)
            j = int(np.argmin(ratio))
            if ratio[j] < 1.0:
                tmax, crossing = float(ratio[j]), j
        t = tmax
        accepted = False
        while t > 1e-12:
            xn = x + t * step
            Zn = np.zeros(K * Dc)
            Zn[idx] = xn[:n]
            if crossing is not None and t == tmax:
                Zn[idx[crossing]] = 0.0
            Zn = Zn.reshape(K, Dc)
            Fn = objective(Zn, xn[n:])
            if Fn <= F - 1e-4 * t * decrement + 1e-15 * abs(F):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        if crossing is not None and t == tmax:
            mask.ravel()[idx[crossing]] = False
        Fprev = F
        Z, q, F = Zn, xn[n:], Fn
        if group:
            # drop groups whose removal is optimal given the others
            r = y - A @ Z.ravel() - B @ q
            changed = False
            for k in np.flatnonzero(mask[:, 0]):
                Ak = A[:, k * Dc:(k + 1) * Dc]
                gk = Ak.T @ (r + Ak @ Z[k])
                if np.sqrt(np.sum((gk / w) ** 2)) <= lam:
                    mask[k] = False
                    Z[k] = 0.0
                    changed = True
            if changed:
                F = objective(Z, q)
                continue
        if decrement <= 1e-28 * max(1.0, abs(F)) or Fprev - F <= 1e-16 * max(1.0, abs(F)):
            break
    return Z, q


class _Face:
    """Linear face of a polyhedral (``linf`` base) regularizer around an iterate.

    Variables are ``x = [z, m, q]``: selected coefficient entries ``z``, the
    face levels ``m`` (one per active knot for the inner family, a single one
    for the outer family) and the null-space coefficients.  On the face the
    regularizer equals ``sum(m)`` and the binding constraints ``E x = 0`` are
    the saturated ``<=`` inequalities of the norm's epigraph.
    """

    def __init__(self, Z: np.ndarray, spec: NormSpec, nq: int, rel: float = 1e-9):
        K, Dc = Z.shape
        self.shape = (K, Dc)
        self.spec = spec
        self.w = spec.weight_vector(Dc)
        W = np.abs(Z) * self.w
        self.inner = spec.family == "inner"
        rows = []  # (entry positions in z, signs, level index)
        if self.inner:
            active = np.flatnonzero(W.max(axis=1, initial=0.0) > 0)
            self.entries = np.array([k * Dc + d for k in active for d in range(Dc)], dtype=int)
            self.levels = len(active)
            for i, k in enumerate(active):
                mk = W[k].max()
                for d in np.flatnonzero(W[k] >= mk * (1 - rel)):
                    rows.append(([i * Dc + d], [np.sign(Z[k, d]) * self.w[d]], i))
        else:
            s = W.sum(axis=0)
            m = s.max(initial=0.0)
            active_knots = np.flatnonzero(np.any(Z != 0, axis=1))
            tight = set(np.flatnonzero(s >= m * (1 - rel)).tolist()) if m > 0 else set()
            ent = []
            for d in range(Dc):
                ks = [k for k in active_knots if Z[k, d] != 0] if d in tight else list(active_knots)
                ent += [k * Dc + d for k in ks]
            self.entries = np.array(sorted(ent), dtype=int)
            self.levels = 1 if m > 0 else 0
            pos = {e: j for j, e in enumerate(self.entries)}
            for d in sorted(tight):
                js = [pos[k * Dc + d] for k in active_knots if Z[k, d] != 0]
                rows.append((js, [np.sign(Z[self.entries[j] // Dc, d]) * self.w[d] for j in js], 0))
        self.signs = {}
        for js, cs, _ in rows:
            for j, c in zip(js, cs):
                self.signs[j] = np.sign(c)
        self.rows = rows
        self.nz = self.entries.size
        self.n = self.nz + self.levels + nq

    def constraint_matrix(self, keep=None) -> np.ndarray:
        rows = self.rows if keep is None else [r for r, k in zip(self.rows, keep) if k]
        E = np.zeros((len(rows), self.n))
        for i, (js, cs, lvl) in enumerate(rows):
            E[i, js] = cs
            E[i, self.nz + lvl] = -1.0
        return E

    def pack(self, Z: np.ndarray, q: np.ndarray) -> np.ndarray:
        W = np.abs(Z) * self.w
        if self.inner:
            act = sorted({int(e) // self.shape[1] for e in self.entries})
            m = np.array([W[k].max() for k in act])
        else:
            m = np.array([W.sum(axis=0).max()]) if self.levels else np.zeros(0)
        return np.concatenate([Z.ravel()[self.entries], m, q])

    def unpack(self, x: np.ndarray):
        Z = np.zeros(self.shape[0] * self.shape[1])
        Z[self.entries] = x[:self.nz]
        return Z.reshape(self.shape), x[self.nz + self.levels:]

    def feasible(self, x: np.ndarray, slack: float = 1e-12) -> bool:
        z, m = x[:self.nz], x[self.nz:self.nz + self.levels]
        scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
        if np.any(m < -slack * scale):
            return False
        for j, sg in self.signs.items():
            if sg * z[j] < -slack * scale:
                return False
        Z, _ = self.unpack(x)
        W = np.abs(Z) * self.w
        if self.inner:
            act = sorted({int(e) // self.shape[1] for e in self.entries})
            return bool(np.all(W[act].max(axis=1, initial=0.0) <= m + slack * scale))
        return bool(self.levels == 0 or W.sum(axis=0).max() <= m[0] + slack * scale)


def _face_polish(A: np.ndarray, B: np.ndarray, y, Z0: np.ndarray, q0: np.ndarray, lam: float, spec: NormSpec,
                 max_rounds: int = 60):
    """Primal active-set solve of the squared-loss problem on faces of an ``linf``-base regularizer.

    ``A`` holds the columns of the knots in ``Z0`` (knot-major order).
    Returns ``(Z, q)`` or ``None`` when the current point cannot be improved.
    """
    Z, q = Z0.copy(), q0.copy()

    def objective(Zc, qc):
        r = y - A @ Zc.ravel() - B @ qc
        return 0.5 * float(r @ r) + lam * regularizer_value(Zc, spec)

    F = objective(Z, q)
    improved = False
    keep = None
    face = None
    for _ in range(max_rounds):
        if face is None:
            face = _Face(Z, spec, q.size)
            keep = np.ones(len(face.rows), dtype=bool)
            if face.nz == 0:
                q_ls = _least_squares_q(B, y)
                return (np.zeros_like(Z), q_ls) if objective(np.zeros_like(Z), q_ls) <= F else None
        x = face.pack(Z, q)
        C = np.hstack([A[:, face.entries], np.zeros((A.shape[0], face.levels)), B])
        c = np.zeros(face.n)
        c[face.nz:face.nz + face.levels] = lam
        E = face.constraint_matrix(keep)
        N = scipy.linalg.null_space(E) if E.shape[0] else np.eye(face.n)
        CN = C @ N
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = np.linalg.lstsq(CN.T @ CN, CN.T @ y - N.T @ c, rcond=1e-13)[0]
        target = N @ u
        p = target - x
        if not np.all(np.isfinite(p)):
            return (Z, q) if improved else None
        if face.feasible(target):
            t = 1.0
        else:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if face.feasible(x + mid * p):
                    lo = mid
                else:
                    hi = mid
            t = lo
        xn = x + t * p
        Zn, qn = face.unpack(xn)
        Fn = objective(Zn, qn)
        if Fn <= F + 1e-15 * max(1.0, abs(F)):
            if Fn < F:
                improved = True
            Z, q, F = Zn, qn, Fn
        elif t == 1.0:
            return (Z, q) if improved else None
        if t < 1.0:
            face = None  # a new constraint became binding
            continue
        # optimal on the face: release a constraint whose multiplier has the wrong sign
        g = -C.T @ (y - C @ xn) + c
        Ek = E
        mu = np.linalg.lstsq(Ek.T, -g, rcond=None)[0] if Ek.shape[0] else np.zeros(0)
        idx = np.flatnonzero(keep)
        if mu.size == 0 or mu.min() >= -1e-10 * max(1.0, lam):
            break
        j = int(np.argmin(mu))
        lvl = face.rows[idx[j]][2]
        if sum(1 for i in idx if face.rows[i][2] == lvl) <= 1:
            break
        keep[idx[j]] = False
    return (Z, q) if improved else None


def _polish_any(A, B, y, Z, q, lam, spec):
    if spec.base == "linf":
        return _face_polish(A, B, y, Z, q, lam, spec)
    return _polish(A, B, y, Z, q, lam, spec)


def _fista(A, B, y, lam, spec, loss, a0, q0, max_iters, rel_tol, restart, check=None, check_every=50):
    """Monotone FISTA on ``(a, q)``; ``a`` is a ``(K, Dc)`` block.

    Returns ``(a, q, F, iterations, history)``.  ``check(a, q)`` returning
    True stops the iteration early.
    """
    K, Dc = a0.shape

    def objective(a, q):
        return loss.value(A @ a.ravel() + B @ q, y) + lam * regularizer_value(a, spec)

    Lip = lipschitz_estimate(A, B) * loss.lipschitz
    x_a, x_q = a0.copy(), q0.copy()
    v_a, v_q = a0.copy(), q0.copy()
    tk = 1.0
    F = objective(x_a, x_q)
    history = [F]
    small = 0
    it = 0
    while it < max_iters:
        it += 1
        g = loss.gradient(A @ v_a.ravel() + B @ v_q, y)
        step = 1.0 / Lip
        n_a = prox(v_a - step * (A.T @ g).reshape(K, Dc), step * lam, spec)
        n_q = v_q - step * (B.T @ g)
        Fn = objective(n_a, n_q)
        if not np.isfinite(Fn):
            raise SolverDivergenceError(f"objective became non-finite at iteration {it}")
        if restart and Fn > F:
            # plain proximal step from the current iterate, raising L if it is underestimated
            tk = 1.0
            for _ in range(60):
                g = loss.gradient(A @ x_a.ravel() + B @ x_q, y)
                step = 1.0 / Lip
                n_a = prox(x_a - step * (A.T @ g).reshape(K, Dc), step * lam, spec)
                n_q = x_q - step * (B.T @ g)
                Fn = objective(n_a, n_q)
                if Fn <= F:
                    break
                Lip *= 2.0
            else:
                n_a, n_q, Fn = x_a, x_q, F
            v_a, v_q = n_a.copy(), n_q.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            v_a = n_a + ((tk - 1.0) / t_next) * (n_a - x_a)
            v_q = n_q + ((tk - 1.0) / t_next) * (n_q - x_q)
            tk = t_next
        change = abs(F - Fn) / max(abs(F), 1e-300)
        x_a, x_q, F = n_a, n_q, Fn
        history.append(F)
        small = small + 1 if change <= rel_tol else 0
        if small >= 10:
            break
        if check is not None and it % check_every == 0 and check(x_a, x_q):
            break
    return x_a, x_q, F, it, history


def _knot_scores(eta: np.ndarray, spec: NormSpec) -> np.ndarray:
    """Per-knot violation score used to grow the working set."""
    if spec.family == "inner" or spec.base == "l1":
        vals = group_dual_values(eta, NormSpec("inner", spec.base, spec.weights))
        return vals
    # outer: each knot scored by the dual norm it would reach on its own
    return np.array([regularizer_dual(eta[k:k + 1], spec) for k in range(eta.shape[0])])


def _peaks(scores: np.ndarray, above: float, limit: int) -> list[int]:
    """Indices of local maxima of ``scores`` exceeding ``above``, largest first."""
    K = scores.size
    idx = []
    for k in range(K):
        left = scores[k - 1] if k > 0 else -np.inf
        right = scores[k + 1] if k + 1 < K else -np.inf
        if scores[k] > above and scores[k] >= left and scores[k] >= right:
            idx.append(k)
    idx.sort(key=lambda k: -scores[k])
    return idx[:limit]


def fista_solve(mats: SystemMatrices, y, cfg: SolveConfig) -> SolveResult:
    """Minimize ``E(y, A a + B q) + lam R(a)`` by FISTA with exact proximal steps.

    With ``cfg.working_set`` the iterations run on a growing set of knots
    chosen where the dual certificate is violated; each restricted solve is
    optionally polished by Newton's method and the loop ends when the
    certificate on the full grid passes.  Without it, FISTA runs on the whole
    grid.

    Examples
    --------
    >>> res = fista_solve(mats, np.zeros(mats.M), SolveConfig(lam=1.0))  # doctest: +SKIP
    >>> res.objective  # doctest: +SKIP
    0.0
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (mats.M,):
        raise ValueError(f"expected {mats.M} data values, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contains non-finite values")
    A, B = mats.A, mats.B
    loss, lam, spec = cfg.loss, cfg.lam, cfg.norm
    K, Dc = mats.grid.count, mats.D_ctrl
    squared = isinstance(loss, SquaredLoss)
    can_polish = cfg.polish and squared

    def objective(Z, q):
        return loss.value(A @ Z.ravel() + B @ q, y) + lam * regularizer_value(Z, spec)

    def certify(Z, q):
        return dual_certificate(mats, y, Z.ravel(), q, lam, spec, cfg.certificate_tol, loss)

    Z = np.zeros((K, Dc))
    q = _least_squares_q(B, y)
    history = [objective(Z, q)]
    iters = 0
    polished = False
    cert = certify(Z, q)
    if squared and lam >= lambda_max(mats, y, spec):
        cert = certify(Z, q)
    elif not cfg.working_set:
        Z, q, F, iters, hist = _fista(A, B, y, lam, spec, loss, Z, q, cfg.max_iters, cfg.rel_tol, cfg.restart,
                                      check=lambda a, b: certify(a, b).passed, check_every=cfg.check_every)
        history += hist[1:]
        cert = certify(Z, q)
        if not cert.passed and can_polish:
            Z, q, polished = _try_polish(A, B, y, Z, q, lam, spec, objective, history)
            cert = certify(Z, q)
    else:
        work: list[int] = []
        polished_last = False
        stalls = 0
        while iters < cfg.max_iters:
            if cert.passed:
                break
            eta = mats.group_view(A.T @ (-loss.gradient(A @ Z.ravel() + B @ q, y))) / lam
            scores = _knot_scores(eta, spec)
            scores[work] = -np.inf
            new = _peaks(scores, 1.0 + cfg.certificate_tol, cfg.working_set_growth)
            if not new and iters > 0 and polished_last:
                # no new violators: retry from the polished point a few times before giving up
                stalls += 1
                if stalls > 3:
                    break
            work = sorted(set(work) | set(new))
            cols = np.concatenate([np.arange(k * Dc, (k + 1) * Dc) for k in work])
            As = A[:, cols]
            Zs = Z[work]

            def restricted_ok(a, b, As=As):
                g = -loss.gradient(As @ a.ravel() + B @ b, y)
                return regularizer_dual((As.T @ g).reshape(-1, Dc) / lam, spec) <= 1.0 + 0.1 * cfg.certificate_tol

            budget = min(cfg.max_iters - iters, cfg.inner_iters)
            Zs, q, F, n_it, hist = _fista(As, B, y, lam, spec, loss, Zs, q, budget, cfg.rel_tol, cfg.restart,
                                          check=restricted_ok, check_every=cfg.check_every)
            iters += n_it
            history += hist[1:]
            polished_last = False
            if can_polish:
                out = _polish_any(As, B, y, Zs, q, lam, spec)
                if out is not None and objective_sub(As, B, y, out[0], out[1], lam, spec) <= F:
                    Zs, q = out
                    F = objective_sub(As, B, y, Zs, q, lam, spec)
                    history.append(F)
                    polished = polished_last = True
            Z = np.zeros((K, Dc))
            Z[work] = Zs
            work = [k for k, row in zip(work, Zs) if np.any(row != 0)]
            cert = certify(Z, q)
            if not new and not can_polish and n_it < budget:
                # restricted problem converged without new violators; more iterations cannot help
                break
    if not cert.passed:
        logger.warning("solver stopped after %d iterations without a passing certificate (value %.6g)",
                       iters, cert.value)
    res = SolveResult(VectorAtomicMeasure(Dc), q, objective(Z, q), cert, iters, None, Z, lam, spec,
                      cert.passed, history, polished)
    return trim_and_audit(res, cfg, mats.M, mats.N, mats.grid)


def objective_sub(A, B, y, Z, q, lam, spec) -> float:
    r = y - A @ Z.ravel() - B @ q
    return 0.5 * float(r @ r) + lam * regularizer_value(Z, spec)


def _try_polish(A, B, y, Z, q, lam, spec, objective, history):
    out = _polish_any(A, B, y, Z, q, lam, spec)
    if out is not None and objective(*out) <= objective(Z, q):
        history.append(objective(*out))
        return out[0], out[1], True
    return Z, q, False
