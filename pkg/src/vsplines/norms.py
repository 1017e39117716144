"""Vector-valued atomic measures and their inner/outer total-variation norms.

An inner norm sums per-knot vector norms, ``sum_k ||a_k||``.  An outer norm
applies the base norm to the vector of per-dimension total variations,
``||(sum_k |a_{k,d}|)_d||``.  Both agree for the l1 base norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "VectorAtomicMeasure",
    "NormSpec",
    "base_norm",
    "dual_vector_norm",
    "inner_norm",
    "outer_norm",
    "measure_norm",
    "norm_equivalence_check",
]

LOCATION_TOL = 1e-9
FAMILIES = ("inner", "outer")
BASES = ("l1", "l2", "linf")
DUAL_BASE = {"l1": "linf", "l2": "l2", "linf": "l1"}


@dataclass(frozen=True)
class NormSpec:
    """Norm on vector measures.

    Parameters
    ----------
    family : {'inner', 'outer'}
        Whether the base norm is applied per knot and summed (inner) or to
        the per-dimension total variations (outer).
    base : {'l1', 'l2', 'linf'}
        Base vector norm on R^D.
    weights : sequence of float, optional
        Positive per-dimension weights; the base norm becomes ``||w * v||``.
    """

    family: str = "inner"
    base: str = "l2"
    weights: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown norm family {self.family!r}; expected one of {FAMILIES}")
        if self.base not in BASES:
            raise ValueError(f"unknown base norm {self.base!r}; expected one of {BASES}")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if any(not np.isfinite(v) or v <= 0 for v in w):
                raise ValueError("norm weights must be finite and strictly positive")
            object.__setattr__(self, "weights", w)

    def weight_vector(self, dim: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(dim)
        if len(self.weights) != dim:
            raise ValueError(f"expected {dim} weights, got {len(self.weights)}")
        return np.asarray(self.weights)

    def to_dict(self) -> dict:
        out = {"family": self.family, "base": self.base}
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NormSpec":
        return cls(data.get("family", "inner"), data.get("base", "l2"), data.get("weights"))


def _pnorm(v: np.ndarray, base: str, axis=None):
    if base == "l1":
        return np.sum(np.abs(v), axis=axis)
    if base == "l2":
        return np.sqrt(np.sum(v * v, axis=axis))
    return np.max(np.abs(v), axis=axis, initial=0.0)


def base_norm(v, spec: NormSpec, axis=None):
    """Weighted base norm ``||w * v||_base`` of a vector (or along ``axis``)."""
    v = np.asarray(v, dtype=float)
    w = spec.weight_vector(v.shape[-1] if axis in (None, -1) else v.shape[axis])
    if axis not in (None, -1):
        shape = [1] * v.ndim
        shape[axis] = -1
        w = w.reshape(shape)
    return _pnorm(v * w, spec.base, axis=axis)


def dual_vector_norm(v, spec: NormSpec, axis=None):
    """Dual of the weighted base norm: ``||v / w||`` in the conjugate exponent."""
    v = np.asarray(v, dtype=float)
    w = spec.weight_vector(v.shape[-1] if axis in (None, -1) else v.shape[axis])
    if axis not in (None, -1):
        shape = [1] * v.ndim
        shape[axis] = -1
        w = w.reshape(shape)
    return _pnorm(v / w, DUAL_BASE[spec.base], axis=axis)


class VectorAtomicMeasure:
    """Finite sum of vector Dirac atoms ``sum amplitude * delta(. - location) e_dim``.

    Atoms are stored canonically: one entry per ``(location, dim)`` key with
    nonzero amplitude, sorted by location then dimension.  Locations closer
    than ``1e-9`` are merged onto the first one seen in sorted order.

    Parameters
    ----------
    dim : int
        Ambient dimension ``D``.
    atoms : iterable of (float, int, float)
        ``(location, dim_index, amplitude)`` with a 0-based ``dim_index``.
    """

    __slots__ = ("dim", "atoms")

    def __init__(self, dim: int, atoms: Iterable = ()):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("measure dimension must be positive")
        raw = []
        for x, d, a in atoms:
            d = int(d)
            if not 0 <= d < self.dim:
                raise ValueError(f"atom dimension index {d} outside [0, {self.dim})")
            x, a = float(x), float(a)
            if not (np.isfinite(x) and np.isfinite(a)):
                raise ValueError("atom locations and amplitudes must be finite")
            raw.append((x, d, a))
        raw.sort()
        merged: dict = {}
        anchor = None
        for x, d, a in raw:
            if anchor is None or abs(x - anchor) > LOCATION_TOL * max(1.0, abs(x)):
                anchor = x
            merged[(anchor, d)] = merged.get((anchor, d), 0.0) + a
        self.atoms = tuple((x, d, a) for (x, d), a in sorted(merged.items()) if a != 0.0)

    @classmethod
    def from_vectors(cls, locations: Sequence[float], amplitudes) -> "VectorAtomicMeasure":
        """Build from knots ``x_k`` and amplitude vectors ``a_k`` (rows)."""
        amplitudes = np.atleast_2d(np.asarray(amplitudes, dtype=float))
        atoms = [(x, d, a[d]) for x, a in zip(locations, amplitudes) for d in range(amplitudes.shape[1])]
        return cls(amplitudes.shape[1], atoms)

    def __len__(self):
        return len(self.atoms)

    def __eq__(self, other):
        return isinstance(other, VectorAtomicMeasure) and self.dim == other.dim and self.atoms == other.atoms

    def __hash__(self):
        return hash((self.dim, self.atoms))

    def __repr__(self):
        return f"VectorAtomicMeasure(dim={self.dim}, atoms={list(self.atoms)})"

    def scale(self, s: float) -> "VectorAtomicMeasure":
        return VectorAtomicMeasure(self.dim, [(x, d, s * a) for x, d, a in self.atoms])

    def __add__(self, other: "VectorAtomicMeasure") -> "VectorAtomicMeasure":
        if other.dim != self.dim:
            raise ValueError("measure dimensions differ")
        return VectorAtomicMeasure(self.dim, self.atoms + other.atoms)

    def canonicalize(self) -> "VectorAtomicMeasure":
        return VectorAtomicMeasure(self.dim, self.atoms)

    def inner_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct knots ``x_k`` and the matrix of amplitude vectors ``a_k`` (K x D)."""
        locs = sorted({x for x, _, _ in self.atoms})
        index = {x: k for k, x in enumerate(locs)}
        amps = np.zeros((len(locs), self.dim))
        for x, d, a in self.atoms:
            amps[index[x], d] += a
        return np.array(locs), amps

    def outer_view(self) -> list[list[tuple[float, float]]]:
        """Per-dimension lists of ``(location, amplitude)``."""
        out = [[] for _ in range(self.dim)]
        for x, d, a in self.atoms:
            out[d].append((x, a))
        return out

    def total_variations(self) -> np.ndarray:
        """``s_d = sum_k |a_{k,d}|``."""
        s = np.zeros(self.dim)
        for _, d, a in self.atoms:
            s[d] += abs(a)
        return s

    def to_list(self) -> list:
        return [[x, d, a] for x, d, a in self.atoms]

    @classmethod
    def from_list(cls, dim: int, data) -> "VectorAtomicMeasure":
        return cls(dim, [tuple(a) for a in data])


def inner_norm(m: VectorAtomicMeasure, spec: NormSpec) -> float:
    """``sum_k ||a_k||_base`` over the distinct knots of ``m``."""
    _, amps = m.inner_view()
    if amps.size == 0:
        return 0.0
    return float(np.sum(base_norm(amps, spec, axis=-1)))


def outer_norm(m: VectorAtomicMeasure, spec: NormSpec) -> float:
    """``||(sum_k |a_{k,d}|)_d||_base``."""
    return float(base_norm(m.total_variations(), spec))


def measure_norm(m: VectorAtomicMeasure, spec: NormSpec) -> float:
    """Dispatch on ``spec.family``."""
    return inner_norm(m, spec) if spec.family == "inner" else outer_norm(m, spec)


def norm_equivalence_check(m: VectorAtomicMeasure, specA: NormSpec, specB: NormSpec) -> tuple[float, float]:
    """Observed range of ``||.||_A / ||.||_B`` over ``m`` and its single-knot restrictions.

    Returns ``(nan, nan)`` for the zero measure.
    """
    candidates = [m]
    locs, _ = m.inner_view()
    if len(locs) > 1:
        for x in locs:
            candidates.append(VectorAtomicMeasure(m.dim, [a for a in m.atoms if a[0] == x]))
    ratios = []
    for c in candidates:
        nb = measure_norm(c, specB)
        if nb > 0:
            ratios.append(measure_norm(c, specA) / nb)
    if not ratios:
        return float("nan"), float("nan")
    return min(ratios), max(ratios)
