"""Exponential-polynomial functions with Dirac combs.

A :class:`GeneralizedFunction` is a finite sum of *pieces* and *Dirac terms*.
A piece is anchored at an offset ``x`` and carries a side flag:

* ``side=+1``  ->  ``u(t - x) * s(t - x)``   (causal, right-continuous)
* ``side=-1``  ->  ``u(x - t) * s(t - x)``   (anti-causal)
* ``side=0``   ->  ``s(t - x)``              (two-sided, no jump)

where ``s(tau) = sum_i c_i * tau**j_i * exp(alpha_i * tau)``.  Coefficients and
exponents are stored as complex numbers; every stored function is real-valued
because terms are kept closed under conjugation.  Dirac terms are triples
``(location, order, weight)`` standing for ``weight * delta^(order)(t - location)``.

Values are immutable.  All operations return new, canonicalized objects.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import SingularEvaluationError

__all__ = [
    "Piece",
    "GeneralizedFunction",
    "gf_differentiate",
    "gf_apply_odo",
    "gf_shift",
    "gf_evaluate",
    "gf_regularity",
    "gf_convolve_atoms",
    "gf_reverse",
    "heaviside",
    "ramp",
    "dirac",
    "exp_poly",
    "DEFAULT_REGULARITY_CAP",
]

ALPHA_TOL = 1e-9
COEFF_RTOL = 1e-12
JUMP_RTOL = 1e-10
DEFAULT_DIRAC_GUARD = 1e-9
DEFAULT_REGULARITY_CAP = 10


def _offset_close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def _alpha_close(a: complex, b: complex) -> bool:
    return abs(a - b) <= ALPHA_TOL * max(1.0, abs(a))


@dataclass(frozen=True)
class Piece:
    offset: float
    side: int
    terms: tuple  # ((alpha: complex, power: int, coeff: complex), ...)

    def taylor(self, k: int) -> tuple[complex, float]:
        """k-th derivative of the piece's profile at ``tau = 0`` and its magnitude."""
        val = 0j
        mag = 0.0
        for alpha, j, c in self.terms:
            if k < j:
                continue
            f = math.factorial(k) // math.factorial(k - j)
            v = c * f * alpha ** (k - j)
            val += v
            mag += abs(v)
        return val, mag

    def profile(self, tau: np.ndarray) -> np.ndarray:
        out = np.zeros(np.shape(tau), dtype=complex)
        for alpha, j, c in self.terms:
            if alpha == 0:
                out += c * tau**j
            else:
                out += c * tau**j * np.exp(alpha * tau)
        return out.real


def _merge_terms(raw: list) -> list:
    """Merge (alpha, j, c) triples, dropping cancellations, then realify."""
    raw = sorted(raw, key=lambda t: (t[1], t[0].real, t[0].imag))
    merged: list[list] = []  # [alpha, j, sum, sumabs]
    for alpha, j, c in raw:
        for m in merged:
            if m[1] == j and _alpha_close(m[0], alpha):
                m[2] += c
                m[3] += abs(c)
                break
        else:
            merged.append([complex(alpha), j, complex(c), abs(c)])
    kept = [m for m in merged if m[2] != 0 and abs(m[2]) > COEFF_RTOL * m[3]]
    if not kept:
        return []
    cmax = max(abs(m[2]) for m in kept)
    kept = [m for m in kept if abs(m[2]) > COEFF_RTOL * cmax]

    # take the real part of the function: pair each term with its conjugate
    out = []
    used = [False] * len(kept)
    for i, (alpha, j, c, _) in enumerate(kept):
        if used[i]:
            continue
        used[i] = True
        if abs(alpha.imag) <= ALPHA_TOL * max(1.0, abs(alpha)):
            cr = c.real
            if cr != 0.0:
                out.append((complex(alpha.real, 0.0), j, complex(cr, 0.0)))
            continue
        partner = 0j
        for k in range(i + 1, len(kept)):
            a2, j2, c2, _ = kept[k]
            if not used[k] and j2 == j and _alpha_close(a2, alpha.conjugate()):
                partner = c2
                used[k] = True
                break
        if alpha.imag < 0:
            alpha, c, partner = alpha.conjugate(), partner, c
        cs = 0.5 * (c + partner.conjugate())
        if cs != 0:
            out.append((alpha, j, cs))
            out.append((alpha.conjugate(), j, cs.conjugate()))
    out.sort(key=lambda t: (t[0].real, t[0].imag, t[1]))
    return out


def _canonical_pieces(raw_pieces: Iterable) -> tuple:
    groups: list[list] = []  # [offset, side, raw_terms]
    for offset, side, terms in sorted(raw_pieces, key=lambda p: (p[1], p[0])):
        if groups and groups[-1][1] == side and _offset_close(groups[-1][0], offset):
            groups[-1][2].extend(terms)
        else:
            groups.append([float(offset), int(side), list(terms)])
    pieces = []
    for offset, side, terms in groups:
        merged = _merge_terms(terms)
        if merged:
            pieces.append(Piece(offset, side, tuple(merged)))
    pieces.sort(key=lambda p: (p.offset, p.side))
    return tuple(pieces)


def _canonical_diracs(raw: Iterable) -> tuple:
    merged: list[list] = []  # [loc, order, sum, sumabs]
    for loc, order, w in sorted(raw, key=lambda d: (d[1], d[0])):
        if merged and merged[-1][1] == order and _offset_close(merged[-1][0], loc):
            merged[-1][2] += w
            merged[-1][3] += abs(w)
        else:
            merged.append([float(loc), int(order), float(w), abs(w)])
    out = [(m[0], m[1], m[2]) for m in merged if m[2] != 0 and abs(m[2]) > COEFF_RTOL * m[3]]
    out.sort(key=lambda d: (d[0], d[1]))
    return tuple(out)


class GeneralizedFunction:
    """Sum of anchored exponential-polynomial pieces and weighted Dirac derivatives."""

    __slots__ = ("pieces", "diracs")

    def __init__(self, pieces: Iterable = (), diracs: Iterable = ()):
        raw = []
        for p in pieces:
            if isinstance(p, Piece):
                raw.append((p.offset, p.side, p.terms))
            else:
                raw.append(p)
        self.pieces = _canonical_pieces(raw)
        self.diracs = _canonical_diracs(diracs)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def zero(cls) -> "GeneralizedFunction":
        return cls()

    def _raw(self):
        return [(p.offset, p.side, list(p.terms)) for p in self.pieces], list(self.diracs)

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other: "GeneralizedFunction") -> "GeneralizedFunction":
        if not isinstance(other, GeneralizedFunction):
            return NotImplemented
        p1, d1 = self._raw()
        p2, d2 = other._raw()
        return GeneralizedFunction(p1 + p2, d1 + d2)

    def __neg__(self) -> "GeneralizedFunction":
        return self * -1.0

    def __sub__(self, other: "GeneralizedFunction") -> "GeneralizedFunction":
        return self + (-other)

    def __mul__(self, s) -> "GeneralizedFunction":
        s = complex(s)
        if s.imag != 0:
            raise TypeError("generalized functions are real-valued; scale by a real number")
        s = s.real
        pieces = [(p.offset, p.side, [(a, j, c * s) for a, j, c in p.terms]) for p in self.pieces]
        diracs = [(x, n, w * s) for x, n, w in self.diracs]
        return GeneralizedFunction(pieces, diracs)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"GeneralizedFunction({self.describe()})"

    # -- inspection -----------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return not self.pieces and not self.diracs

    def scale(self) -> float:
        """Largest coefficient or Dirac weight magnitude (0 for the zero function)."""
        vals = [abs(c) for p in self.pieces for _, _, c in p.terms]
        vals += [abs(w) for _, _, w in self.diracs]
        return max(vals, default=0.0)

    def max_smooth_coeff(self) -> float:
        return max((abs(c) for p in self.pieces for _, _, c in p.terms), default=0.0)

    def allclose(self, other: "GeneralizedFunction", atol: float = 1e-12, rtol: float = 1e-9) -> bool:
        diff = self - other
        ref = max(self.scale(), other.scale())
        return diff.scale() <= atol + rtol * ref

    def structurally_equal(self, other: "GeneralizedFunction", tol: float = 1e-12) -> bool:
        """Same pieces, term keys and Dirac keys, values equal within ``tol``."""
        if len(self.pieces) != len(other.pieces) or len(self.diracs) != len(other.diracs):
            return False
        for p, q in zip(self.pieces, other.pieces):
            if p.side != q.side or not _offset_close(p.offset, q.offset) or len(p.terms) != len(q.terms):
                return False
            for (a1, j1, c1), (a2, j2, c2) in zip(p.terms, q.terms):
                if j1 != j2 or abs(a1 - a2) > tol or abs(c1 - c2) > tol:
                    return False
        for (x1, n1, w1), (x2, n2, w2) in zip(self.diracs, other.diracs):
            if n1 != n2 or abs(x1 - x2) > tol or abs(w1 - w2) > tol:
                return False
        return True

    def breakpoints(self) -> list[float]:
        pts = {p.offset for p in self.pieces if p.side != 0}
        pts.update(x for x, _, _ in self.diracs)
        return sorted(pts)

    # -- calculus -------------------------------------------------------------
    def differentiate(self) -> "GeneralizedFunction":
        return gf_differentiate(self)

    def shift(self, x: float) -> "GeneralizedFunction":
        return gf_shift(self, x)

    def reverse(self) -> "GeneralizedFunction":
        return gf_reverse(self)

    def regularity(self, cap: int = DEFAULT_REGULARITY_CAP) -> int:
        return gf_regularity(self, cap)

    def __call__(self, t, dirac_guard: float = DEFAULT_DIRAC_GUARD):
        if np.ndim(t) == 0:
            return gf_evaluate(self, float(t), dirac_guard)
        return self.evaluate_many(t, dirac_guard)

    def evaluate_many(self, t, dirac_guard: float = DEFAULT_DIRAC_GUARD) -> np.ndarray:
        """Vectorized evaluation of the smooth part (right limits at boundaries)."""
        t = np.asarray(t, dtype=float)
        for x, n, w in self.diracs:
            near = np.abs(t - x) <= dirac_guard
            if np.any(near):
                raise SingularEvaluationError(
                    f"evaluation at t={t[near].ravel()[0]!r} hits delta^({n}) located at {x!r}"
                )
        out = np.zeros(t.shape)
        for p in self.pieces:
            tau = t - p.offset
            if p.side == 1:
                mask = tau >= 0
            elif p.side == -1:
                mask = tau < 0
            else:
                mask = np.ones(t.shape, dtype=bool)
            if np.any(mask):
                out[mask] += p.profile(tau[mask])
        return out

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "pieces": [
                {
                    "offset": p.offset,
                    "side": p.side,
                    "terms": [
                        {"alpha": [a.real, a.imag], "power": j, "coeff": [c.real, c.imag]}
                        for a, j, c in p.terms
                    ],
                }
                for p in self.pieces
            ],
            "diracs": [{"location": x, "order": n, "weight": w} for x, n, w in self.diracs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneralizedFunction":
        pieces = [
            (
                float(p["offset"]),
                int(p["side"]),
                [(complex(*t["alpha"]), int(t["power"]), complex(*t["coeff"])) for t in p["terms"]],
            )
            for p in data.get("pieces", [])
        ]
        diracs = [(float(d["location"]), int(d["order"]), float(d["weight"])) for d in data.get("diracs", [])]
        return cls(pieces, diracs)

    def describe(self, digits: int = 6) -> str:
        """Short human-readable rendering, e.g. ``u(t)*[1*t]``."""
        parts = []
        for p in self.pieces:
            arg = "t" if p.offset == 0 else f"t-{p.offset:.{digits}g}"
            gate = {1: f"u({arg})*", -1: f"u(-({arg}))*", 0: ""}[p.side]
            terms = []
            for a, j, c in p.terms:
                if a.imag < 0:
                    continue
                if a.imag > 0:
                    body = f"2*Re[({c.real:.{digits}g}{c.imag:+.{digits}g}j)*exp(({a.real:.{digits}g}{a.imag:+.{digits}g}j)*τ)"
                    body += f"*τ^{j}]" if j else "]"
                else:
                    body = f"{c.real:.{digits}g}"
                    if j:
                        body += f"*τ^{j}" if j > 1 else "*τ"
                    if a.real != 0:
                        body += f"*exp({a.real:.{digits}g}*τ)"
                terms.append(body)
            parts.append(f"{gate}[{' + '.join(terms)}]{{τ={arg}}}")
        for x, n, w in self.diracs:
            d = "δ" + ("'" * n if n <= 3 else f"^({n})")
            parts.append(f"{w:.{digits}g}*{d}(t{-x:+.{digits}g})" if x != 0 else f"{w:.{digits}g}*{d}(t)")
        return " + ".join(parts) if parts else "0"

    def to_csv(self, path, start: float, stop: float, count: int) -> None:
        """Sample on a uniform grid and write ``t,value`` rows."""
        ts = np.linspace(start, stop, count)
        vals = self.evaluate_many(ts)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value"])
            for t, v in zip(ts, vals):
                w.writerow([repr(float(t)), repr(float(v))])


# -- constructors ------------------------------------------------------------

def exp_poly(terms: Sequence, offset: float = 0.0, side: int = 1) -> GeneralizedFunction:
    """Single piece ``u(t-offset) * sum c (t-offset)^j e^{alpha (t-offset)}`` from ``(alpha, j, c)``."""
    return GeneralizedFunction([(offset, side, [(complex(a), int(j), complex(c)) for a, j, c in terms])])


def heaviside(offset: float = 0.0) -> GeneralizedFunction:
    return exp_poly([(0, 0, 1.0)], offset)


def ramp(offset: float = 0.0) -> GeneralizedFunction:
    return exp_poly([(0, 1, 1.0)], offset)


def dirac(location: float = 0.0, order: int = 0, weight: float = 1.0) -> GeneralizedFunction:
    return GeneralizedFunction((), [(location, order, weight)])


# -- operations ---------------------------------------------------------------

def _differentiate_raw(f: GeneralizedFunction):
    pieces = []
    diracs = []
    for p in f.pieces:
        terms = []
        jump = 0j
        jump_mag = 0.0
        for a, j, c in p.terms:
            if a != 0:
                terms.append((a, j, c * a))
            if j > 0:
                terms.append((a, j - 1, c * j))
            else:
                jump += c
                jump_mag += abs(c)
        pieces.append((p.offset, p.side, terms))
        if p.side != 0:
            s0 = jump.real
            if abs(s0) > JUMP_RTOL * jump_mag:
                diracs.append((p.offset, 0, p.side * s0))
    diracs.extend((x, n + 1, w) for x, n, w in f.diracs)
    return pieces, diracs


def gf_differentiate(f: GeneralizedFunction) -> GeneralizedFunction:
    """Distributional derivative; every piece boundary contributes its jump as a Dirac."""
    pieces, diracs = _differentiate_raw(f)
    return GeneralizedFunction(pieces, diracs)


def gf_apply_odo(op, f: GeneralizedFunction) -> GeneralizedFunction:
    """Apply ``sum_n coeffs[n] D^n`` to ``f``; cancellations are detected on the full sum."""
    coeffs = op.coeffs if hasattr(op, "coeffs") else tuple(op)
    pieces: list = []
    diracs: list = []
    cur = f
    for n, a in enumerate(coeffs):
        if n > 0:
            cur = gf_differentiate(cur)
        if a == 0:
            continue
        for p in cur.pieces:
            pieces.append((p.offset, p.side, [(al, j, c * a) for al, j, c in p.terms]))
        diracs.extend((x, k, w * a) for x, k, w in cur.diracs)
    return GeneralizedFunction(pieces, diracs)


def gf_shift(f: GeneralizedFunction, x: float) -> GeneralizedFunction:
    """Translate ``f`` to ``f(t - x)``."""
    x = float(x)
    pieces = [(p.offset + x, p.side, p.terms) for p in f.pieces]
    diracs = [(loc + x, n, w) for loc, n, w in f.diracs]
    return GeneralizedFunction(pieces, diracs)


def gf_reverse(f: GeneralizedFunction) -> GeneralizedFunction:
    """Time reversal ``f(-t)``: causal pieces become anti-causal and vice versa."""
    pieces = []
    for p in f.pieces:
        terms = [(-a, j, c * (-1) ** j) for a, j, c in p.terms]
        pieces.append((-p.offset, -p.side, terms))
    diracs = [(-x, n, w * (-1) ** n) for x, n, w in f.diracs]
    return GeneralizedFunction(pieces, diracs)


def gf_evaluate(f: GeneralizedFunction, t: float, dirac_guard: float = DEFAULT_DIRAC_GUARD) -> float:
    """Pointwise value of the smooth part; raises near any Dirac location."""
    return float(f.evaluate_many(np.array([t]), dirac_guard)[0])


def gf_regularity(f: GeneralizedFunction, cap: int = DEFAULT_REGULARITY_CAP) -> int:
    """Regularity index: C^k -> k, bounded with jumps -> -1, delta^(N) -> -(N+2)."""
    if f.diracs:
        return -(max(n for _, n, _ in f.diracs) + 2)
    boundaries: list[list[Piece]] = []
    for p in f.pieces:
        if p.side == 0:
            continue
        for b in boundaries:
            if _offset_close(b[0].offset, p.offset):
                b.append(p)
                break
        else:
            boundaries.append([p])
    best = cap
    for group in boundaries:
        for k in range(0, best + 1):
            jump = 0j
            mag = 0.0
            for p in group:
                v, m = p.taylor(k)
                jump += p.side * v
                mag += m
            if abs(jump.real) > JUMP_RTOL * mag:
                best = min(best, k - 1)
                break
    return best


def gf_convolve_atoms(f: GeneralizedFunction, atoms: Iterable) -> GeneralizedFunction:
    """``sum_k a_k f(t - x_k)`` for atoms ``(x_k, a_k)``."""
    pieces: list = []
    diracs: list = []
    for x, a in atoms:
        if a == 0:
            continue
        s = gf_shift(f, x) * a
        p, d = s._raw()
        pieces += p
        diracs += d
    return GeneralizedFunction(pieces, diracs)


def linear_combination(funcs: Sequence[GeneralizedFunction], weights: Sequence[float]) -> GeneralizedFunction:
    pieces: list = []
    diracs: list = []
    for f, w in zip(funcs, weights):
        if w == 0 or f.is_zero:
            continue
        p, d = (f * float(w))._raw()
        pieces += p
        diracs += d
    return GeneralizedFunction(pieces, diracs)
