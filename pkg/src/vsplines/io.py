"""Problem files: JSON schema, validation and assembly into library objects.

A problem file describes one operator, an optional constant left factor
``Q``, a list of measurement functionals, the regularizing norm, one or more
values of ``lambda``, the knot grid, the data (explicit ``y`` or a ground
truth to simulate), noise, solver settings and output options.  Unknown keys
are rejected everywhere.

Operator forms (exactly one key)::

    {"mdo": [[[c0, c1, ...], ...], ...]}    # entry (r, c) as ascending coefficients
    {"diagonal": [[c0, c1, ...], ...]}      # diagonal entries only
    {"first_order": {"A": [[...]], "P": [[...]]}}   # L = I D - A, dictionary G P
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .exceptions import VSplinesError
from .forward import Grid, MeasurementFunctional
from .mdo import MatrixOperator
from .norms import NormSpec, VectorAtomicMeasure

__all__ = [
    "PROBLEM_SCHEMA",
    "ProblemError",
    "Problem",
    "load_problem",
    "parse_problem",
    "parse_operator",
    "dumps",
]

_number = {"type": "number"}
_vector = {"type": "array", "items": _number}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_coeffs = {"type": "array", "items": _number, "minItems": 1}

_sampling = {
    "type": "object",
    "properties": {"kind": {"const": "sampling"}, "c": _vector, "t": _number},
    "required": ["kind", "c", "t"],
    "additionalProperties": False,
}
_weighted = {
    "type": "object",
    "properties": {
        "kind": {"const": "weighted_sum"},
        "terms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {"w": _number, "c": _vector, "t": _number},
                "required": ["w", "c", "t"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["kind", "terms"],
    "additionalProperties": False,
}
_quadrature = {
    "type": "object",
    "properties": {
        "kind": {"const": "quadrature"},
        "dim": {"type": "integer", "minimum": 0},
        "window": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
        "weights": {"type": "array", "items": _number, "minItems": 2},
    },
    "required": ["kind", "dim", "window"],
    "additionalProperties": False,
}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "vsplines problem file",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "operator": {
            "type": "object",
            "oneOf": [
                {"required": ["mdo"]},
                {"required": ["diagonal"]},
                {"required": ["first_order"]},
            ],
            "properties": {
                "mdo": {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _coeffs}},
                "diagonal": {"type": "array", "minItems": 1, "items": _coeffs},
                "first_order": {
                    "type": "object",
                    "properties": {"A": _matrix, "P": _matrix},
                    "required": ["A"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "Q": _matrix,
        "measurements": {"type": "array", "minItems": 1, "items": {"oneOf": [_sampling, _weighted, _quadrature]}},
        "norm": {
            "type": "object",
            "properties": {
                "family": {"enum": ["inner", "outer"]},
                "base": {"enum": ["l1", "l2", "linf"]},
                "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
            "additionalProperties": False,
        },
        "lambda": {
            "oneOf": [
                {"type": "number", "exclusiveMinimum": 0},
                {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
                {
                    "type": "object",
                    "properties": {
                        "relative": {
                            "oneOf": [
                                {"type": "number", "exclusiveMinimum": 0},
                                {"type": "array", "minItems": 1,
                                 "items": {"type": "number", "exclusiveMinimum": 0}},
                            ]
                        }
                    },
                    "required": ["relative"],
                    "additionalProperties": False,
                },
            ]
        },
        "grid": {
            "type": "object",
            "properties": {
                "start": _number,
                "step": {"type": "number", "exclusiveMinimum": 0},
                "count": {"type": "integer", "minimum": 1},
                "stop": _number,
            },
            "required": ["start", "step"],
            "additionalProperties": False,
        },
        "data": {
            "type": "object",
            "oneOf": [{"required": ["y"]}, {"required": ["ground_truth"]}],
            "properties": {
                "y": _vector,
                "ground_truth": {
                    "type": "object",
                    "properties": {
                        "atoms": {"type": "array",
                                  "items": {"type": "array", "items": _number, "minItems": 3, "maxItems": 3}},
                        "q": _vector,
                    },
                    "required": ["atoms"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {"sigma": {"type": "number", "minimum": 0}, "seed": {"type": "integer"}},
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "max_iters": {"type": "integer", "minimum": 0},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "restart": {"type": "boolean"},
                "trim_threshold": {"type": "number", "minimum": 0},
                "certificate_tol": {"type": "number", "exclusiveMinimum": 0},
                "polish": {"type": "boolean"},
                "working_set": {"type": "boolean"},
                "l2_lambda": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {
                "sample_grid": {
                    "type": "object",
                    "properties": {"start": _number, "stop": _number, "count": {"type": "integer", "minimum": 2}},
                    "required": ["start", "stop", "count"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "required": ["operator"],
    "additionalProperties": False,
}


class ProblemError(VSplinesError, ValueError):
    """Invalid problem file; ``location`` names where the problem was found."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


@dataclass
class Problem:
    """Parsed problem file.

    ``lambdas`` are absolute values unless ``relative`` is true, in which case
    they multiply ``||A^T y||_dual`` once the system is assembled.
    """

    operator: MatrixOperator
    A_state: np.ndarray | None = None
    P: np.ndarray | None = None
    Q: np.ndarray | None = None
    measurements: list = field(default_factory=list)
    norm: NormSpec = field(default_factory=NormSpec)
    lambdas: list = field(default_factory=lambda: [1e-3])
    relative: bool = True
    grid: Grid | None = None
    y: np.ndarray | None = None
    ground_truth: tuple | None = None
    noise_sigma: float = 0.0
    seed: int = 0
    solver: dict = field(default_factory=dict)
    sample_grid: tuple | None = None
    name: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def is_first_order(self) -> bool:
        return self.A_state is not None

    @property
    def right_inverse(self) -> np.ndarray | None:
        """Constant matrix that maps controls to the state (``P`` or ``Q_dagger``)."""
        if self.P is not None:
            return self.P
        if self.Q is not None:
            from .mdo import constant_smith

            return constant_smith(self.Q)[3]
        return None


def _location(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return "$" + path


def parse_operator(spec: dict) -> tuple[MatrixOperator, np.ndarray | None, np.ndarray | None]:
    """Operator, and for the first-order form the state matrix and ``P``."""
    if "mdo" in spec:
        rows = spec["mdo"]
        if any(len(r) != len(rows[0]) for r in rows):
            raise ProblemError("operator rows have different lengths", "$.operator.mdo")
        return MatrixOperator.from_coeffs(rows), None, None
    if "diagonal" in spec:
        return MatrixOperator.diagonal(spec["diagonal"]), None, None
    fo = spec["first_order"]
    A = np.asarray(fo["A"], dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ProblemError("A must be square", "$.operator.first_order.A")
    P = None
    if "P" in fo:
        P = np.asarray(fo["P"], dtype=float)
        if P.ndim != 2 or P.shape[0] != A.shape[0]:
            raise ProblemError(f"P must have {A.shape[0]} rows", "$.operator.first_order.P")
    return MatrixOperator.first_order(A), A, P


def parse_problem(data: dict) -> Problem:
    """Validate ``data`` against :data:`PROBLEM_SCHEMA` and build a :class:`Problem`."""
    validator = jsonschema.Draft202012Validator(PROBLEM_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ProblemError(err.message, _location(err))
    L, A_state, P = parse_operator(data["operator"])
    D = L.rows
    Q = None
    if "Q" in data:
        Q = np.asarray(data["Q"], dtype=float)
        if Q.ndim != 2 or Q.shape[1] != D:
            raise ProblemError(f"Q must have {D} columns", "$.Q")
        if P is not None:
            raise ProblemError("give either P or Q, not both", "$.Q")
    nus = []
    for i, m in enumerate(data.get("measurements", [])):
        try:
            nu = MeasurementFunctional.from_dict(m)
        except ValueError as exc:
            raise ProblemError(str(exc), f"$.measurements[{i}]") from None
        if nu.is_pointwise and any(len(c) != D for _, c, _ in nu.samplings):
            raise ProblemError(f"sampling vector must have length {D}", f"$.measurements[{i}]")
        if not nu.is_pointwise and nu.dim >= D:
            raise ProblemError(f"quadrature dimension must be below {D}", f"$.measurements[{i}]")
        nus.append(nu)
    norm = NormSpec.from_dict(data.get("norm", {}))
    lam = data.get("lambda", {"relative": 1e-3})
    if isinstance(lam, dict):
        rel = lam["relative"]
        lambdas, relative = (list(rel) if isinstance(rel, list) else [rel]), True
    else:
        lambdas, relative = (list(lam) if isinstance(lam, list) else [lam]), False
    grid = None
    if "grid" in data:
        try:
            grid = Grid.from_dict(data["grid"])
        except (KeyError, ValueError) as exc:
            raise ProblemError(str(exc), "$.grid") from None
    y = truth = None
    if "data" in data:
        d = data["data"]
        if "y" in d:
            y = np.asarray(d["y"], dtype=float)
            if y.size != len(nus):
                raise ProblemError(f"expected {len(nus)} data values, got {y.size}", "$.data.y")
        else:
            gt = d["ground_truth"]
            Dc = D if (P is None and Q is None) else (P.shape[1] if P is not None else Q.shape[0])
            try:
                atoms = VectorAtomicMeasure(Dc, [tuple(a) for a in gt["atoms"]])
            except ValueError as exc:
                raise ProblemError(str(exc), "$.data.ground_truth.atoms") from None
            truth = (atoms, None if "q" not in gt else np.asarray(gt["q"], dtype=float))
    noise = data.get("noise", {})
    out = data.get("output", {})
    sg = out.get("sample_grid")
    return Problem(
        operator=L,
        A_state=A_state,
        P=P,
        Q=Q,
        measurements=nus,
        norm=norm,
        lambdas=[float(v) for v in lambdas],
        relative=relative,
        grid=grid,
        y=y,
        ground_truth=truth,
        noise_sigma=float(noise.get("sigma", 0.0)),
        seed=int(noise.get("seed", 0)),
        solver=dict(data.get("solver", {})),
        sample_grid=None if sg is None else (float(sg["start"]), float(sg["stop"]), int(sg["count"])),
        name=data.get("name", ""),
        raw=data,
    )


def load_problem(path) -> Problem:
    """Read and parse a problem file; JSON syntax errors carry line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemError(f"cannot read problem file: {exc.strerror}", str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"malformed JSON: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from None
    if not isinstance(data, dict):
        raise ProblemError("top level must be an object", f"{path}:$")
    return parse_problem(data)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not np.isfinite(v):
            return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip float representation."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
