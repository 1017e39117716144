"""Proximal operators of the inner and outer total-variation norms on a coefficient grid.

Coefficient blocks have shape ``(K, D)``: row ``k`` holds the amplitude vector
at knot ``k``.  The inner norm is ``sum_k ||w * Z[k]||``; the outer norm is
``h(s)`` with ``s_d = sum_k |Z[k, d]|`` and ``h`` the weighted base norm.
"""

from __future__ import annotations

import numpy as np

from .exceptions import VSplinesError
from .norms import DUAL_BASE, NormSpec

__all__ = [
    "soft_threshold",
    "prox_inner",
    "prox_outer",
    "prox",
    "regularizer_value",
    "regularizer_dual",
    "subgradient_check",
]

BISECTION_MAX_ITERS = 200


def _weights(spec: NormSpec | None, D: int) -> np.ndarray:
    return np.ones(D) if spec is None else spec.weight_vector(D)


def soft_threshold(z: np.ndarray, thresh) -> np.ndarray:
    """Entrywise ``sign(z) * max(|z| - thresh, 0)``."""
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def _group_shrink_weighted(Z: np.ndarray, tau: float, w: np.ndarray) -> np.ndarray:
    """Rows of ``argmin 1/2 ||x - z||^2 + tau ||w * x||_2``."""
    out = np.zeros_like(Z)
    dual = np.sqrt(np.sum((Z / w) ** 2, axis=1))
    active = dual > tau
    if not np.any(active):
        return out
    Za = Z[active]
    if np.all(w == w[0]):
        nz = np.sqrt(np.sum(Za * Za, axis=1))
        out[active] = Za * (1.0 - tau * w[0] / nz)[:, None]
        return out
    # nu = ||w * x|| solves sum w^2 z^2 / (nu + tau w^2)^2 = 1, decreasing in nu
    w2 = w * w
    lo = np.zeros(Za.shape[0])
    hi = np.sqrt(np.sum(w2 * Za * Za, axis=1))
    for _ in range(BISECTION_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        val = np.sum(w2 * Za * Za / (mid[:, None] + tau * w2) ** 2, axis=1)
        big = val > 1.0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
        if np.all(hi - lo <= 1e-16 * np.maximum(hi, 1e-300)):
            break
    nu = 0.5 * (lo + hi)
    out[active] = Za * (nu[:, None] / (nu[:, None] + tau * w2))
    return out


def _project_weighted_l1_rows(Z: np.ndarray, radius: float, w: np.ndarray) -> np.ndarray:
    """Project each row onto ``{v : sum |v_i| / w_i <= radius}``."""
    absz = np.abs(Z)
    inside = np.sum(absz / w, axis=1) <= radius
    # v_i = sign z_i max(|z_i| - theta / w_i, 0); breakpoints theta_i = |z_i| w_i
    b = absz * w
    order = np.argsort(-b, axis=1)
    bs = np.take_along_axis(b, order, axis=1)
    ws = w[order]
    c1 = np.cumsum(np.take_along_axis(absz, order, axis=1) / ws, axis=1)
    c2 = np.cumsum(1.0 / ws**2, axis=1)
    theta = (c1 - radius) / c2
    valid = theta < bs
    j = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    th = np.maximum(theta[np.arange(Z.shape[0]), j], 0.0)
    V = np.sign(Z) * np.maximum(absz - th[:, None] / w, 0.0)
    V[inside] = Z[inside]
    return V


def prox_inner(Z, tau: float, base: str, spec: NormSpec | None = None) -> np.ndarray:
    """Prox of ``tau * sum_k ||Z[k]||_base`` (weights from ``spec``).

    Examples
    --------
    >>> prox_inner(np.array([[3.0, 4.0]]), 5.0, "l2")
    array([[0., 0.]])
    >>> prox_inner(np.array([[3.0, 1.0]]), 2.0, "linf")
    array([[1., 1.]])
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return Z.copy()
    w = _weights(spec, Z.shape[1])
    if base == "l1":
        return soft_threshold(Z, tau * w)
    if base == "l2":
        return _group_shrink_weighted(Z, tau, w)
    if base == "linf":
        return Z - _project_weighted_l1_rows(Z, tau, w)
    raise ValueError(f"unknown base norm {base!r}")


class _ColumnRadii:
    """Per column, the ``r >= 0`` with ``sum_k (|U_k| - r)_+ = beta + gamma r``.

    The descending sort and prefix sums are computed once so that repeated
    evaluations inside the multiplier bisection stay linear in the block size.
    """

    def __init__(self, U: np.ndarray):
        self.u = -np.sort(-np.abs(U), axis=0)
        self.S = np.cumsum(self.u, axis=0)
        self.j = np.arange(1, self.u.shape[0] + 1)[:, None]
        self.cols = np.arange(self.u.shape[1])

    def __call__(self, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        F = self.S - self.j * self.u - beta - gamma * self.u  # F at r = u_(j), increasing in j
        count = np.sum(F <= 0, axis=0)  # F(u_(1)) <= 0 always
        Sj = self.S[count - 1, self.cols]
        return np.maximum((Sj - beta) / (count + gamma), 0.0)


def _outer_dual_radii(U: np.ndarray, base: str, w: np.ndarray) -> np.ndarray:
    """Column radii ``r`` of the projection of ``U`` onto ``{V : h*((max_k |V[k, d]|)_d) <= 1}``.

    The projection itself is ``clip(U, -r, r)``; base l2 or linf.
    """
    rmax = np.max(np.abs(U), axis=0)
    dual_base = DUAL_BASE[base]

    def hstar(r):
        v = r / w
        return np.sqrt(np.sum(v * v)) if dual_base == "l2" else np.sum(np.abs(v))

    if hstar(rmax) <= 1.0:
        return rmax
    column_radii = _ColumnRadii(U)
    zero = np.zeros_like(w)

    def radii(mu):
        if base == "l2":
            return column_radii(zero, mu / w**2)
        return column_radii(mu / w, zero)

    lo, hi = 0.0, 1.0
    it = 0
    while hstar(radii(hi)) > 1.0:
        hi *= 2.0
        it += 1
        if it > BISECTION_MAX_ITERS:
            raise VSplinesError(f"outer prox bracketing failed (mu > {hi:.3g})")
    for it in range(BISECTION_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if hstar(radii(mid)) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    else:
        raise VSplinesError(
            f"outer prox bisection did not converge in {BISECTION_MAX_ITERS} iterations (interval [{lo}, {hi}])"
        )
    return radii(hi)


def prox_outer(Z, tau: float, base: str, spec: NormSpec | None = None) -> np.ndarray:
    """Prox of ``tau * h((sum_k |Z[k, d]|)_d)``.

    The l1 case is the entrywise soft threshold shared with :func:`prox_inner`.
    For l2 and linf the Moreau identity reduces the prox to a projection onto
    the dual ball, computed by bisection on the multiplier of the dual-norm
    constraint with exact per-column radii.  ``Z - tau * clip(Z / tau, -r, r)``
    is evaluated as a per-column soft threshold so that zeros are exact.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return Z.copy()
    w = _weights(spec, Z.shape[1])
    if base == "l1":
        return soft_threshold(Z, tau * w)
    if base not in ("l2", "linf"):
        raise ValueError(f"unknown base norm {base!r}")
    return soft_threshold(Z, tau * _outer_dual_radii(Z / tau, base, w))


def prox(Z, tau: float, spec: NormSpec) -> np.ndarray:
    if spec.family == "inner":
        return prox_inner(Z, tau, spec.base, spec)
    return prox_outer(Z, tau, spec.base, spec)


def regularizer_value(Z, spec: NormSpec) -> float:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    w = spec.weight_vector(Z.shape[1])
    X = np.abs(Z) * w
    if spec.base == "l1":
        # one summation order for both families keeps inner and outer l1 bit-identical
        return float(X.sum())
    if spec.family == "inner":
        if spec.base == "l2":
            return float(np.sum(np.sqrt(np.sum(X * X, axis=1))))
        return float(np.sum(np.max(X, axis=1, initial=0.0)))
    s = X.sum(axis=0)
    if spec.base == "l2":
        return float(np.sqrt(np.sum(s * s)))
    return float(np.max(s, initial=0.0))


def group_dual_values(G, spec: NormSpec) -> np.ndarray:
    """Dual base norm of every row (inner) or the per-column maxima (outer)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    w = spec.weight_vector(G.shape[1])
    if spec.family == "inner":
        V = np.abs(G) / w
        if spec.base == "l1":
            return np.max(V, axis=1, initial=0.0)
        if spec.base == "l2":
            return np.sqrt(np.sum(V * V, axis=1))
        return np.sum(V, axis=1)
    return np.max(np.abs(G), axis=0, initial=0.0)


def regularizer_dual(G, spec: NormSpec) -> float:
    """Dual norm of the regularizer evaluated at ``G``."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    vals = group_dual_values(G, spec)
    if spec.family == "inner":
        return float(np.max(vals, initial=0.0))
    w = spec.weight_vector(G.shape[1])
    v = vals / w
    if spec.base == "l1":
        return float(np.max(v, initial=0.0))
    if spec.base == "l2":
        return float(np.sqrt(np.sum(v * v)))
    return float(np.sum(v))


def subgradient_check(Z, X, tau: float, spec: NormSpec, tol: float = 1e-8) -> tuple[bool, float, float]:
    """Verify ``(Z - X) / tau`` is a subgradient of the regularizer at ``X``.

    Returns ``(passed, dual_excess, gap)`` where ``dual_excess`` is the amount
    by which the dual norm exceeds one and ``gap = |<g, X> - R(X)|``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    g = (Z - X) / tau
    excess = regularizer_dual(g, spec) - 1.0
    R = regularizer_value(X, spec)
    gap = abs(float(np.sum(g * X)) - R)
    return bool(excess <= tol and gap <= tol * max(1.0, R)), float(excess), float(gap)
