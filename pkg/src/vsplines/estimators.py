"""scikit-learn style estimators wrapping the TV solver and the quadratic baseline.

Both estimators take measurements as rows of ``X = [t, c_1, ..., c_D]``: the
target ``y_m`` is ``c_m^T f(t_m)`` for the unknown vector spline ``f``.
``predict`` returns the same kind of value for new rows and
``reconstruct(t)`` samples the fitted spline itself.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .forward import Grid, MeasurementFunctional, build_system
from .io import parse_operator
from .l2 import l2_fit
from .mdo import MatrixOperator, greens_matrix, nullspace_basis
from .norms import NormSpec
from .prox import regularizer_dual
from .solver import SolveConfig, fista_solve

__all__ = ["TVSplineRegressor", "SmoothingSplineRegressor"]


def _operator(op) -> tuple[MatrixOperator, np.ndarray | None]:
    """Operator and optional right inverse from an operator or a problem-file dict."""
    if isinstance(op, MatrixOperator):
        return op, None
    if isinstance(op, dict):
        L, _, P = parse_operator(op)
        return L, P
    raise TypeError("operator must be a MatrixOperator or a problem-file operator dict")


def _functionals(X: np.ndarray, D: int) -> list:
    if X.shape[1] != D + 1:
        raise ValueError(f"X must have {D + 1} columns [t, c_1..c_{D}], got {X.shape[1]}")
    return [MeasurementFunctional.sampling(row[1:], row[0]) for row in X]


class _SplineBase(RegressorMixin, BaseEstimator):
    def _setup(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        L, P = _operator(self.operator)
        control = P if self.control is None else np.atleast_2d(np.asarray(self.control, dtype=float))
        G = greens_matrix(L)
        basis = nullspace_basis(L)
        nus = _functionals(X, L.rows)
        self.n_features_in_ = X.shape[1]
        self.operator_ = L
        self.greens_ = G
        self.basis_ = basis
        self.dictionary_ = G if control is None else G.times_constant(control)
        return X, y, nus

    def predict(self, X) -> np.ndarray:
        """``c^T f(t)`` for every row ``[t, c]`` of ``X``."""
        check_is_fitted(self, "dictionary_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        F = self.reconstruct(X[:, 0])
        return np.sum(F * X[:, 1:], axis=1)


class TVSplineRegressor(_SplineBase):
    """Sparse vector spline by total-variation regularization on a knot grid.

    Parameters
    ----------
    operator : MatrixOperator or dict
        The operator ``L``, or an operator dict in the problem-file format
        (a first-order ``{"A", "P"}`` form fixes the control matrix).
    alpha : float
        Regularization weight.  With ``relative_alpha`` it is a fraction of
        ``||A^T y||_dual``.
    family, base : str
        Norm on the innovation (``'inner'``/``'outer'`` and ``'l1'``/``'l2'``/``'linf'``).
    grid_step : float, optional
        Knot spacing; default is 1/100 of the sampling span.
    grid_start, grid_stop : float, optional
        Knot range; default is the sampling range.
    control : array_like, optional
        Right inverse ``Q_dagger`` (or ``P``) mapping controls to the state.
    relative_alpha : bool
    max_iters, certificate_tol : solver settings.

    Attributes
    ----------
    result_ : SolveResult
    system_ : SystemMatrices
    lambda_ : float
        Absolute regularization weight used.
    """

    def __init__(self, operator=None, alpha=1e-4, family="inner", base="l2", grid_step=None, grid_start=None,
                 grid_stop=None, control=None, relative_alpha=True, max_iters=20000, certificate_tol=1e-6):
        self.operator = operator
        self.alpha = alpha
        self.family = family
        self.base = base
        self.grid_step = grid_step
        self.grid_start = grid_start
        self.grid_stop = grid_stop
        self.control = control
        self.relative_alpha = relative_alpha
        self.max_iters = max_iters
        self.certificate_tol = certificate_tol

    def fit(self, X, y):
        if not (np.isscalar(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be a positive scalar")
        X, y, nus = self._setup(X, y)
        t = X[:, 0]
        a = float(t.min()) if self.grid_start is None else float(self.grid_start)
        b = float(t.max()) if self.grid_stop is None else float(self.grid_stop)
        step = self.grid_step if self.grid_step is not None else ((b - a) / 100 if b > a else 1.0)
        grid = Grid.spanning(a, b, step)
        norm = NormSpec(self.family, self.base)
        mats = build_system(self.dictionary_, self.basis_, nus, grid)
        lam = float(self.alpha)
        if self.relative_alpha:
            scale = regularizer_dual(mats.group_view(mats.A.T @ y), norm)
            lam = lam * scale if scale > 0 else lam
        cfg = SolveConfig(lam=lam, norm=norm, max_iters=self.max_iters, certificate_tol=self.certificate_tol)
        self.system_ = mats
        self.lambda_ = lam
        self.result_ = fista_solve(mats, y, cfg)
        return self

    def reconstruct(self, t) -> np.ndarray:
        """Fitted spline sampled at ``t``; shape ``(len(t), D)``."""
        check_is_fitted(self, "result_")
        return self.result_.reconstruct(self.system_, t)

    @property
    def knots_(self) -> np.ndarray:
        check_is_fitted(self, "result_")
        return self.result_.atoms.inner_view()[0]


class SmoothingSplineRegressor(_SplineBase):
    """Quadratic (L2) smoothing spline, the dense counterpart of :class:`TVSplineRegressor`.

    Parameters
    ----------
    operator : MatrixOperator or dict
    alpha : float
        Nonnegative weight of the quadratic penalty; zero interpolates.
    control : array_like, optional
    window_start : float, optional
        Lower truncation of the kernel integrals.

    Attributes
    ----------
    result_ : L2Result
    """

    def __init__(self, operator=None, alpha=0.0, control=None, window_start=None):
        self.operator = operator
        self.alpha = alpha
        self.control = control
        self.window_start = window_start

    def fit(self, X, y):
        if not (np.isscalar(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be a nonnegative scalar")
        X, y, nus = self._setup(X, y)
        self.result_ = l2_fit(self.dictionary_, self.basis_, nus, y, float(self.alpha), self.window_start)
        return self

    def reconstruct(self, t) -> np.ndarray:
        check_is_fitted(self, "result_")
        return self.result_.reconstruct(t)
