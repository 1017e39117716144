"""Quadratic (smoothing-spline) baseline for comparison with the TV solver.

The smoothing spline is ``f = q + sum_m alpha_m K(., t_m) c_m`` with kernel
``K(t, s) = int G(t - tau) G(s - tau)^T d tau``, the convolution of the causal
Green's matrix with its anti-causal adjoint.  The integral runs over a
truncated window ``[w0, max t_m]``; causality makes the upper end exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .exceptions import AdmissibilityError, AssumptionError, QuadratureError
from .genfunc import gf_reverse, gf_shift, linear_combination
from .mdo import GreensMatrix, NullspaceBasis

__all__ = ["L2Kernel", "L2Result", "l2_gram", "l2_solve", "l2_fit", "compare_l1_l2"]

QUAD_RTOL = 1e-7
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gauss(func, a: float, b: float):
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
    vals = func(x)
    return 0.5 * (b - a) * np.tensordot(_GL_WEIGHTS, vals, axes=(0, 0))


def adaptive_integral(func, breaks: Sequence[float], rtol: float = QUAD_RTOL, max_depth: int = 40):
    """Integrate an array-valued ``func`` over ``[breaks[0], breaks[-1]]``.

    ``func`` maps a 1-D array of nodes to an array whose first axis indexes the
    nodes.  Each panel between consecutive breakpoints is refined by bisection
    until 20-point Gauss-Legendre agrees with its two-halves estimate to
    ``rtol`` times the overall magnitude.
    """
    breaks = sorted(set(float(b) for b in breaks))
    panels = [(a, b) for a, b in zip(breaks[:-1], breaks[1:]) if b > a]
    if not panels:
        return 0.0
    coarse = [_gauss(func, a, b) for a, b in panels]
    scale = max(float(np.max(np.abs(sum(coarse)))), max(float(np.max(np.abs(c))) for c in coarse), 1e-300)
    total = 0.0
    stack = [(a, b, c, 0) for (a, b), c in zip(panels, coarse)]
    while stack:
        a, b, whole, depth = stack.pop()
        m = 0.5 * (a + b)
        left, right = _gauss(func, a, m), _gauss(func, m, b)
        if np.max(np.abs(left + right - whole)) <= rtol * scale * 1e-2 or b - a <= 1e-14 * max(1.0, abs(a)):
            total = total + left + right
        elif depth >= max_depth:
            raise QuadratureError(f"quadrature did not converge on [{a}, {b}] (rtol {rtol})")
        else:
            stack.append((a, m, left, depth + 1))
            stack.append((m, b, right, depth + 1))
    return total


class L2Kernel:
    """Kernel of the smoothing spline realized by quadrature.

    Parameters
    ----------
    dictionary : GreensMatrix
        ``G`` (or ``G Q_dagger`` in reduced mode); shape ``(D, D_ctrl)``.
    basis : NullspaceBasis
    functionals : sequence of MeasurementFunctional
        Sampling or weighted-sum functionals.
    window_start : float, optional
        Lower truncation point; default ``min t - 5 * span``.
    """

    def __init__(self, dictionary: GreensMatrix, basis: NullspaceBasis, functionals, window_start=None):
        self.dictionary = dictionary
        self.basis = basis
        self.functionals = tuple(functionals)
        for i, nu in enumerate(self.functionals):
            if not nu.is_pointwise:
                raise ValueError("the quadratic baseline supports sampling functionals only")
        times = [t for nu in self.functionals for t in nu.support_times()]
        self.t_min, self.t_max = min(times), max(times)
        span = max(self.t_max - self.t_min, 1.0)
        self.window_start = self.t_min - 5.0 * span if window_start is None else float(window_start)
        rows, cols = dictionary.shape
        # v_m(tau) = sum_i w_i G(t_i - tau)^T c_i, one generalized function per dictionary column
        self._v = []
        for nu in self.functionals:
            comps = []
            for j in range(cols):
                parts, weights = [], []
                for w, c, t in nu.samplings:
                    h = linear_combination(dictionary.column(j), c)
                    parts.append(gf_shift(gf_reverse(h), t))
                    weights.append(w)
                comps.append(linear_combination(parts, weights))
            if any(f.diracs for f in comps):
                raise AdmissibilityError(f"measurement {len(self._v)} ({nu.describe()}) has a singular representer")
            self._v.append(tuple(comps))
        self._breaks = sorted({self.window_start, self.t_max}
                              | {x for vm in self._v for f in vm for x in f.breakpoints()
                                 if self.window_start < x < self.t_max})
        self._gram = None

    @property
    def M(self) -> int:
        return len(self.functionals)

    def _V(self, tau: np.ndarray) -> np.ndarray:
        """``(len(tau), M, D_ctrl)`` samples of the representers."""
        out = np.empty((tau.size, self.M, self.dictionary.shape[1]))
        for m, vm in enumerate(self._v):
            for j, f in enumerate(vm):
                out[:, m, j] = f.evaluate_many(tau)
        return out

    def gram(self) -> np.ndarray:
        if self._gram is None:
            def integrand(tau):
                V = self._V(tau)
                return np.einsum("nmj,nkj->nmk", V, V)

            Kmat = adaptive_integral(integrand, self._breaks)
            self._gram = 0.5 * (Kmat + Kmat.T)
        return self._gram

    def null_matrix(self) -> np.ndarray:
        return np.array([[nu.apply(vec) for vec in self.basis.basis] for nu in self.functionals]).reshape(
            self.M, self.basis.size)

    def kernel_columns(self, t: float) -> np.ndarray:
        """``(D, M)`` matrix of ``int G(t - tau) v_m(tau) d tau``."""
        rows, cols = self.dictionary.shape
        shifted = [[gf_shift(gf_reverse(self.dictionary[r, j]), t) for j in range(cols)] for r in range(rows)]
        upper = min(t, self.t_max)
        if upper <= self.window_start:
            return np.zeros((rows, self.M))
        breaks = [b for b in self._breaks if b < upper] + [upper]

        def integrand(tau):
            V = self._V(tau)
            Gt = np.empty((tau.size, rows, cols))
            for r in range(rows):
                for j in range(cols):
                    Gt[:, r, j] = shifted[r][j].evaluate_many(tau)
            return np.einsum("nrj,nmj->nrm", Gt, V)

        return adaptive_integral(integrand, breaks)


@dataclass
class L2Result:
    alpha: np.ndarray
    beta: np.ndarray
    lam: float
    kernel: L2Kernel = field(repr=False)
    fitted: np.ndarray = field(default=None, repr=False)

    def reconstruct(self, t) -> np.ndarray:
        """Array of shape ``(len(t), D)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nb = self.kernel.basis.evaluate(t) if self.kernel.basis.size else np.zeros((t.size, self.kernel.dictionary.dim, 0))
        out = np.einsum("tdn,n->td", nb, self.beta)
        for i, ti in enumerate(t):
            out[i] += self.kernel.kernel_columns(ti) @ self.alpha
        return out

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "alpha": [float(v) for v in self.alpha],
            "beta": [float(v) for v in self.beta],
            "window_start": self.kernel.window_start,
        }


def l2_gram(dictionary: GreensMatrix, basis: NullspaceBasis, nus, window_start=None):
    """Gram matrix, null-space sampling matrix and the kernel object."""
    ker = L2Kernel(dictionary, basis, nus, window_start)
    return ker.gram(), ker.null_matrix(), ker


def l2_solve(gram, nullmat, y, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``(K + lam I) alpha + P beta = y``, ``P^T alpha = 0``."""
    K = np.asarray(gram, dtype=float)
    P = np.asarray(nullmat, dtype=float).reshape(K.shape[0], -1)
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    M, N = P.shape
    S = np.zeros((M + N, M + N))
    S[:M, :M] = K + lam * np.eye(M)
    S[:M, M:] = P
    S[M:, :M] = P.T
    sv = np.linalg.svd(S, compute_uv=False)
    rank = int(np.sum(sv > 1e-13 * sv[0])) if sv.size and sv[0] > 0 else 0
    if rank < M + N:
        raise AssumptionError(f"singular smoothing-spline system: rank {rank} of {M + N} (defect {M + N - rank})")
    sol = scipy.linalg.solve(S, np.concatenate([y, np.zeros(N)]), assume_a="sym")
    return sol[:M], sol[M:]


def l2_fit(dictionary: GreensMatrix, basis: NullspaceBasis, nus, y, lam: float, window_start=None,
           check_window: bool = True) -> L2Result:
    """Smoothing spline for the given data.

    With ``check_window`` the fit is repeated on a window widened by one span
    and the fitted values must agree within ``1e-7`` relative.
    """
    K, P, ker = l2_gram(dictionary, basis, nus, window_start)
    alpha, beta = l2_solve(K, P, y, lam)
    fitted = K @ alpha + P @ beta
    if check_window:
        span = max(ker.t_max - ker.t_min, 1.0)
        K2, P2, _ = l2_gram(dictionary, basis, nus, ker.window_start - span)
        a2, b2 = l2_solve(K2, P2, y, lam)
        fitted2 = K2 @ a2 + P2 @ b2
        scale = max(float(np.max(np.abs(fitted), initial=0.0)), float(np.linalg.norm(y)), 1e-300)
        if np.max(np.abs(fitted - fitted2), initial=0.0) > 1e-7 * scale:
            raise QuadratureError(
                f"window truncation is not negligible: widening changes the fit by "
                f"{np.max(np.abs(fitted - fitted2)):.3g}"
            )
    return L2Result(alpha, beta, lam, ker, fitted)


def compare_l1_l2(tv_result, l2_result: L2Result, mats, y, sample_grid) -> dict:
    """Side-by-side summary of the TV and quadratic reconstructions."""
    t = np.asarray(sample_grid, dtype=float)
    f_tv = tv_result.reconstruct(mats, t)
    f_l2 = l2_result.reconstruct(t)
    y = np.asarray(y, dtype=float)
    tv_fit = mats.A @ tv_result.coefficients.ravel() + mats.B @ tv_result.q
    l2_fit_vals = l2_result.fitted
    amax = float(np.max(np.abs(l2_result.alpha), initial=0.0))
    dense = int(np.sum(np.abs(l2_result.alpha) > 1e-6 * amax)) if amax > 0 else 0
    M, N = mats.M, mats.N
    Dc = mats.D_ctrl
    return {
        "t": t.tolist(),
        "tv_reconstruction": f_tv.tolist(),
        "l2_reconstruction": f_l2.tolist(),
        "tv_knots": tv_result.audit.K if tv_result.audit else 0,
        "l2_active_coefficients": dense,
        "M": M,
        "N": N,
        "tv_refit_residual": float(np.linalg.norm(y - tv_fit)),
        "l2_refit_residual": float(np.linalg.norm(y - l2_fit_vals)),
        "tv_parameter_count": (M - N) * (Dc + 1) + N if tv_result.norm.family == "inner" else (M - N) * 2 * Dc + N,
        "l2_parameter_count": M + N,
        "convention": "kernel integrals over the real line truncated at the window start",
        "window_start": l2_result.kernel.window_start,
    }
