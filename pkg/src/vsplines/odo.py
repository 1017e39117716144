"""Scalar ordinary differential operators as real polynomials in D."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import NoRootsError
from .genfunc import GeneralizedFunction, dirac

__all__ = [
    "OdoPoly",
    "RootSet",
    "odo_compose",
    "odo_add",
    "odo_adjoint",
    "odo_roots",
    "cluster_roots",
    "causal_green_scalar",
]

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class OdoPoly:
    """``sum_n coeffs[n] D^n`` with ascending coefficients; trailing zeros stripped."""

    coeffs: tuple = ()

    def __post_init__(self):
        c = [float(v) for v in self.coeffs]
        while c and c[-1] == 0.0:
            c.pop()
        object.__setattr__(self, "coeffs", tuple(c))

    @classmethod
    def from_any(cls, obj) -> "OdoPoly":
        if isinstance(obj, OdoPoly):
            return obj
        if np.ndim(obj) == 0:
            return cls((float(obj),))
        return cls(tuple(obj))

    @classmethod
    def D(cls, n: int = 1) -> "OdoPoly":
        return cls((0.0,) * n + (1.0,))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def leading(self) -> float:
        return self.coeffs[-1] if self.coeffs else 0.0

    def __add__(self, other):
        return odo_add(self, OdoPoly.from_any(other))

    __radd__ = __add__

    def __neg__(self):
        return OdoPoly(tuple(-c for c in self.coeffs))

    def __sub__(self, other):
        return self + (-OdoPoly.from_any(other))

    def __rsub__(self, other):
        return OdoPoly.from_any(other) - self

    def __mul__(self, other):
        return odo_compose(self, OdoPoly.from_any(other))

    __rmul__ = __mul__

    def __call__(self, s):
        """Evaluate the symbol ``p(s)``."""
        out = 0 * s
        for c in reversed(self.coeffs):
            out = out * s + c
        return out

    def derivative(self, k: int = 1) -> "OdoPoly":
        c = list(self.coeffs)
        for _ in range(k):
            c = [n * c[n] for n in range(1, len(c))]
        return OdoPoly(tuple(c))

    def adjoint(self) -> "OdoPoly":
        return odo_adjoint(self)

    def apply(self, f: GeneralizedFunction) -> GeneralizedFunction:
        from .genfunc import gf_apply_odo

        return gf_apply_odo(self, f)

    def allclose(self, other, atol: float = 1e-12, rtol: float = 1e-10) -> bool:
        other = OdoPoly.from_any(other)
        n = max(len(self.coeffs), len(other.coeffs))
        a = np.zeros(n)
        b = np.zeros(n)
        a[: len(self.coeffs)] = self.coeffs
        b[: len(other.coeffs)] = other.coeffs
        return bool(np.allclose(a, b, atol=atol, rtol=rtol))

    def to_list(self) -> list:
        return list(self.coeffs)

    def __repr__(self):
        if self.is_zero:
            return "OdoPoly(0)"
        terms = []
        for n, c in enumerate(self.coeffs):
            if c == 0:
                continue
            terms.append(f"{c:g}" + ("" if n == 0 else ("*D" if n == 1 else f"*D^{n}")))
        return "OdoPoly(" + " + ".join(terms) + ")"


@dataclass(frozen=True)
class RootSet:
    roots: tuple  # ((value: complex, multiplicity: int), ...)
    leading_coeff: float

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.roots)

    def expanded(self) -> list:
        """Roots repeated by multiplicity, clusters kept adjacent."""
        return [r for r, m in self.roots for _ in range(m)]


def odo_compose(a: OdoPoly, b: OdoPoly) -> OdoPoly:
    """Operator composition (commutative polynomial product)."""
    if a.is_zero or b.is_zero:
        return OdoPoly()
    return OdoPoly(tuple(np.convolve(a.coeffs, b.coeffs)))


def odo_add(a: OdoPoly, b: OdoPoly) -> OdoPoly:
    n = max(len(a.coeffs), len(b.coeffs))
    out = [0.0] * n
    for i, c in enumerate(a.coeffs):
        out[i] += c
    for i, c in enumerate(b.coeffs):
        out[i] += c
    return OdoPoly(tuple(out))


def odo_adjoint(a: OdoPoly) -> OdoPoly:
    """Formal adjoint: ``(D^n)* = (-1)^n D^n``."""
    return OdoPoly(tuple(c if n % 2 == 0 else -c for n, c in enumerate(a.coeffs)))


def _single_linkage(values: Sequence[complex], tol: float) -> list[list[int]]:
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(values[i] - values[j]) <= tol:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _multiple_root_ok(poly: OdoPoly | None, center: complex, mult: int) -> bool:
    """Check ``p^(j)(center) ~ 0`` for ``j < mult`` relative to the term sizes."""
    if poly is None:
        return True
    for j in range(mult):
        dp = poly.derivative(j)
        val = dp(complex(center))
        scale = sum(abs(c) * abs(center) ** n for n, c in enumerate(dp.coeffs)) or 1.0
        if abs(val) > 1e-6 * scale:
            return False
    return True


def cluster_roots(values: Sequence[complex], cluster_tol: float | None = None,
                  poly: OdoPoly | None = None) -> list[tuple[complex, int]]:
    """Merge numerically split multiple roots and enforce conjugate symmetry.

    A first single-linkage pass uses ``cluster_tol``.  A second pass merges
    clusters whose combined spread stays at the round-off floor for a root of
    that multiplicity, provided the derivative test on ``poly`` confirms it.
    """
    values = [complex(v) for v in values]
    if not values:
        return []
    rho = max(1.0, max(abs(v) for v in values))
    if cluster_tol is None:
        cluster_tol = 1e-7 * rho
    clusters = [[values[i] for i in g] for g in _single_linkage(values, cluster_tol)]

    def floor(m):
        return 10.0 * EPS ** (1.0 / m) * rho

    for level in range(2, len(values) + 1):
        centers = [sum(cl) / len(cl) for cl in clusters]
        new = []
        for group in _single_linkage(centers, floor(level)):
            union = [v for g in group for v in clusters[g]]
            c = sum(union) / len(union)
            spread = max(abs(v - c) for v in union)
            if len(group) > 1 and spread <= floor(len(union)) and _multiple_root_ok(poly, c, len(union)):
                new.append(union)
            else:
                new.extend(clusters[g] for g in group)
        clusters = new

    centers = []
    for cl in clusters:
        c = sum(cl) / len(cl)
        if abs(c.imag) <= cluster_tol:
            c = complex(c.real, 0.0)
        centers.append([c, len(cl)])
    # conjugate pairing
    out: list[tuple[complex, int]] = []
    used = [False] * len(centers)
    for i, (c, m) in enumerate(centers):
        if used[i]:
            continue
        used[i] = True
        if c.imag == 0:
            out.append((c, m))
            continue
        best_k, best_d = None, math.inf
        for k in range(len(centers)):
            if not used[k]:
                d = abs(centers[k][0] - c.conjugate())
                if d < best_d:
                    best_k, best_d = k, d
        if best_k is None or centers[best_k][1] != m:
            raise ValueError(f"conjugate symmetry violated near root {c}")
        used[best_k] = True
        partner = centers[best_k][0]
        if c.imag > 0:
            top = 0.5 * (c + partner.conjugate())
        else:
            top = 0.5 * (c.conjugate() + partner)
        out.append((top, m))
        out.append((top.conjugate(), m))
    out.sort(key=lambda r: (r[0].real, r[0].imag))
    return out


def odo_roots(a: OdoPoly, cluster_tol: float | None = None) -> RootSet:
    """Roots of the symbol from companion-matrix eigenvalues, clustered by multiplicity."""
    if a.degree < 1:
        raise NoRootsError("no roots: operator is constant or zero")
    coeffs = list(a.coeffs)
    nzero = 0
    while coeffs[nzero] == 0.0:
        nzero += 1
    rest = coeffs[nzero:]
    values = [0j] * nzero
    if len(rest) > 1:
        values += list(np.roots(rest[::-1]))
    clustered = cluster_roots(values, cluster_tol, poly=a)
    return RootSet(tuple(clustered), a.leading)


def causal_green_scalar(a: OdoPoly, cluster_tol: float | None = None) -> GeneralizedFunction:
    """Unique causal Green's function of ``a`` as a causal exponential-polynomial.

    The coefficients solve the confluent Vandermonde system fixing
    ``g^(k)(0+) = 0`` for ``k < deg-1`` and ``g^(deg-1)(0+) = 1/leading``.
    """
    if a.is_zero:
        raise ValueError("the zero operator has no Green's function")
    if a.degree == 0:
        return dirac(0.0, 0, 1.0 / a.coeffs[0])
    rs = odo_roots(a, cluster_tol)
    n = a.degree
    cols = [(alpha, j) for alpha, m in rs.roots for j in range(m)]
    V = np.zeros((n, n), dtype=complex)
    for col, (alpha, j) in enumerate(cols):
        for k in range(j, n):
            V[k, col] = math.factorial(k) // math.factorial(k - j) * alpha ** (k - j)
    rhs = np.zeros(n, dtype=complex)
    rhs[-1] = 1.0 / a.leading
    cond = np.linalg.cond(V)
    if cond > 1e12:
        logger.warning("confluent Vandermonde system is ill-conditioned (cond=%.3g)", cond)
    c = np.linalg.solve(V, rhs)
    terms = [(alpha, j, c[i]) for i, (alpha, j) in enumerate(cols)]
    return GeneralizedFunction([(0.0, 1, terms)])


def poly_from_roots(roots: Iterable[complex], leading: float = 1.0) -> OdoPoly:
    """Real polynomial with the given (conjugate-closed) roots."""
    c = np.poly(list(roots))[::-1] * leading
    return OdoPoly(tuple(np.real_if_close(c, tol=1e6).real))
