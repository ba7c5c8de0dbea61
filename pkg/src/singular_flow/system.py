"""Coordinate presentations of linearly singular systems and their loader.

Sign convention: every :class:`LinSingSystem` stores ``(A, c)``.  A
time-dependent system reads ``A(t,q) v + c(t,q) = 0``; an autonomous one
reads ``A(x) xdot = b(x)`` with ``b = -c``.  Documents may give either ``c``
or (autonomous only) ``b``; the loader converts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np

from . import expr as E
from .errors import DimensionMismatch, ExprSyntaxError, SchemaError, TooFewSamples, UnknownIdentifier
from .jet import Jet, stack

KINDS = ("linearly_singular", "second_order", "lagrangian", "skinner_rusk", "implicit")

_EXPR = {"type": ["string", "number"]}
_EXPR_LIST = {"type": "array", "items": _EXPR}
_NAME = {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "time_variable": _NAME,
        "states": {"type": "array", "items": _NAME},
        "parameters": {"type": "object", "additionalProperties": {"type": "number"}},
        "time_functions": {"type": "object", "additionalProperties": {"type": "string"}},
        "A": {"type": "array", "items": _EXPR_LIST},
        "c": _EXPR_LIST,
        "b": _EXPR_LIST,
        "autonomous": {"type": "boolean"},
        "time_state": _NAME,
        "q": {"type": "array", "items": _NAME, "minItems": 1},
        "L": _EXPR,
        "F": _EXPR_LIST,
        "seeds": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "x0": {"type": "array", "items": {"type": "number"}},
        "gamma": _EXPR_LIST,
        "mode": {"enum": ["vector_hull", "jet_field"]},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "linearly_singular"}}},
         "then": {"required": ["states", "A"], "anyOf": [{"required": ["c"]}, {"required": ["b"]}]}},
        {"if": {"properties": {"kind": {"const": "second_order"}}},
         "then": {"required": ["states", "A", "c"]}},
        {"if": {"properties": {"kind": {"enum": ["lagrangian", "skinner_rusk"]}}},
         "then": {"required": ["q", "L"]}},
        {"if": {"properties": {"kind": {"const": "implicit"}}},
         "then": {"required": ["states", "F"]}},
    ],
}


def velocity_name(q: str) -> str:
    return f"v_{q}"


@dataclass
class Chart:
    """Global coordinates: optional time, ordered states, and named constants."""

    time_name: str | None
    state_names: tuple[str, ...]
    parameters: dict[str, float] = field(default_factory=dict)
    time_functions: dict[str, E.TimeFunction] = field(default_factory=dict)

    def __post_init__(self):
        self.state_names = tuple(self.state_names)
        names = list(self.variables)
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate variable names in {names}")
        clash = set(names) & (set(self.parameters) | set(self.time_functions))
        if clash:
            raise SchemaError(f"names used both as variables and constants: {sorted(clash)}")

    @property
    def variables(self) -> tuple[str, ...]:
        if self.time_name is None:
            return self.state_names
        return (self.time_name,) + self.state_names

    def scope(self) -> E.Scope:
        return E.Scope(self.variables, self.parameters, self.time_functions)

    def parse(self, text) -> E.Expr:
        return E.parse_expr(text, self.scope())


class _Compiled:
    """Mixin: compiled evaluation of ``A`` and ``b`` for autonomous systems."""

    A: tuple
    c: tuple

    @cached_property
    def _float_fn(self):
        return E.compile_exprs(self._flat_exprs(), "float")

    @cached_property
    def _jet_fn(self):
        return E.compile_exprs(self._flat_exprs(), "jet")

    def _flat_exprs(self):
        return [e for row in self.A for e in row] + [E.neg(e) for e in self.c]


@dataclass(eq=True)
class LinSingSystem(_Compiled):
    """``A(t,q) v + c(t,q) = 0`` (time-dependent) or ``A(x) xdot = -c(x)``.

    ``time_state`` names the state that plays the role of time in an
    autonomized system (its velocity is pinned to 1 by a row of the system).
    """

    chart: Chart
    A: tuple[tuple[E.Expr, ...], ...]
    c: tuple[E.Expr, ...]
    time_dependent: bool
    time_state: str | None = None

    def __post_init__(self):
        self.A = tuple(tuple(row) for row in self.A)
        self.c = tuple(self.c)
        n = len(self.chart.state_names)
        if len(self.c) != len(self.A):
            raise DimensionMismatch(f"A has {len(self.A)} rows but c has {len(self.c)} entries")
        for i, row in enumerate(self.A):
            if len(row) != n:
                raise DimensionMismatch(f"row {i} of A has {len(row)} entries, expected {n}")
        if self.time_dependent and self.chart.time_name is None:
            raise SchemaError("time-dependent system needs a time variable")
        if not self.time_dependent and self.chart.time_name is not None:
            raise SchemaError("autonomous system must not declare a separate time variable")
        if self.time_state is not None and self.time_state not in self.chart.state_names:
            raise SchemaError(f"time_state {self.time_state!r} is not a state")

    @property
    def nrows(self) -> int:
        return len(self.A)

    @property
    def nstates(self) -> int:
        return len(self.chart.state_names)

    @property
    def b(self) -> tuple[E.Expr, ...]:
        return tuple(E.neg(e) for e in self.c)

    # autonomous-system protocol used by the constraint engine ------------
    @property
    def names(self) -> tuple[str, ...]:
        return self.chart.state_names

    @property
    def dim(self) -> int:
        return self.nstates

    @property
    def time_index(self) -> int | None:
        return None if self.time_state is None else self.names.index(self.time_state)

    def _require_autonomous(self):
        if self.time_dependent:
            raise TypeError("system is time-dependent; autonomize it first")

    def matrices_float(self, x) -> tuple[np.ndarray, np.ndarray]:
        self._require_autonomous()
        vals = np.array(self._float_fn(x), dtype=float)
        m, n = self.nrows, self.nstates
        return vals[: m * n].reshape(m, n), vals[m * n:]

    @cached_property
    def _jet_layout(self):
        flat = self._flat_exprs()
        const = [(i, e.value) for i, e in enumerate(flat) if isinstance(e, (E.Const, E.Param))]
        varying = [i for i, e in enumerate(flat) if not isinstance(e, (E.Const, E.Param))]
        fn = E.compile_exprs([flat[i] for i in varying], "jet") if varying else None
        idx = np.array([i for i, _ in const], dtype=int)
        vals = np.array([v for _, v in const], dtype=float)
        return idx, vals, varying, fn

    def matrices(self, x: Jet) -> tuple[Jet, Jet]:
        self._require_autonomous()
        m, n = self.nrows, self.nstates
        k = x.k
        batch = x.shape[1:]
        idx, vals, varying, fn = self._jet_layout
        data = np.zeros((m * n + m,) + batch + (1 << k,))
        if idx.size:
            data[(idx, Ellipsis, 0)] = vals.reshape((-1,) + (1,) * len(batch))
        if fn is not None:
            for i, v in zip(varying, fn(x)):
                if isinstance(v, Jet):
                    data[i, ..., : 1 << v.k] = v.data
                else:
                    data[i, ..., 0] = v
        A = Jet(data[: m * n].reshape((m, n) + batch + (1 << k,)), k)
        return A, Jet(data[m * n:], k)


@dataclass(eq=True)
class SecondOrderSystem:
    """``A(t,q,v) qddot + c(t,q,v) = 0`` over the chart ``(t, q, v)``."""

    chart: Chart
    q_names: tuple[str, ...]
    A: tuple[tuple[E.Expr, ...], ...]
    c: tuple[E.Expr, ...]

    def __post_init__(self):
        self.q_names = tuple(self.q_names)
        self.A = tuple(tuple(r) for r in self.A)
        self.c = tuple(self.c)
        n = len(self.q_names)
        if len(self.chart.state_names) != 2 * n:
            raise DimensionMismatch("second-order chart must list q then v names")
        if len(self.c) != len(self.A):
            raise DimensionMismatch(f"A has {len(self.A)} rows but c has {len(self.c)} entries")
        for i, row in enumerate(self.A):
            if len(row) != n:
                raise DimensionMismatch(f"row {i} of A has {len(row)} entries, expected {n}")

    @property
    def v_names(self) -> tuple[str, ...]:
        return self.chart.state_names[len(self.q_names):]


@dataclass(eq=True)
class ImplicitResiduals:
    """``F(t, q, v) = 0``; supported only for checking sampled solutions."""

    chart: Chart
    q_names: tuple[str, ...]
    F: tuple[E.Expr, ...]


# loading -------------------------------------------------------------------

def _with_path(path: str, fn):
    try:
        return fn()
    except (ExprSyntaxError, UnknownIdentifier) as err:
        err.field_path = path
        err.args = (f"{path}: {err.args[0]}",) + tuple(err.args[1:])
        raise


def _chart(doc: Mapping, time_name: str | None, states: Sequence[str]) -> Chart:
    tvar = doc.get("time_variable", "t")
    params = {k: float(v) for k, v in doc.get("parameters", {}).items()}
    tfs: dict[str, E.TimeFunction] = {}
    for name, text in doc.get("time_functions", {}).items():
        tfs[name] = _with_path(f"time_functions.{name}",
                               lambda: E.make_time_function(name, text, tvar, params, dict(tfs)))
    return Chart(time_name, tuple(states), params, tfs)


def _parse_matrix(chart: Chart, rows, key: str):
    scope = chart.scope()
    return tuple(
        tuple(_with_path(f"{key}[{i}][{j}]", lambda: E.parse_expr(txt, scope)) for j, txt in enumerate(row))
        for i, row in enumerate(rows)
    )


def _parse_vector(chart: Chart, items, key: str):
    scope = chart.scope()
    return tuple(_with_path(f"{key}[{i}]", lambda: E.parse_expr(txt, scope)) for i, txt in enumerate(items))


def validate_document(doc: Any) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {err.message}") from None


def load_system(document: Mapping | str | Path):
    """Build a system object from a spec document (dict, JSON text, or path)."""
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    validate_document(document)
    doc = document
    kind = doc["kind"]
    tvar = doc.get("time_variable", "t")

    if kind == "linearly_singular":
        autonomous = bool(doc.get("autonomous", False))
        chart = _chart(doc, None if autonomous else tvar, doc["states"])
        A = _parse_matrix(chart, doc["A"], "A")
        if "b" in doc:
            if not autonomous:
                raise SchemaError("'b' is only accepted for autonomous systems; give 'c'")
            c = tuple(E.neg(e) for e in _parse_vector(chart, doc["b"], "b"))
        else:
            c = _parse_vector(chart, doc["c"], "c")
        return LinSingSystem(chart, A, c, not autonomous, doc.get("time_state"))

    if kind == "second_order":
        qs = tuple(doc["states"])
        chart = _chart(doc, tvar, qs + tuple(velocity_name(q) for q in qs))
        return SecondOrderSystem(chart, qs, _parse_matrix(chart, doc["A"], "A"), _parse_vector(chart, doc["c"], "c"))

    if kind == "implicit":
        qs = tuple(doc["states"])
        chart = _chart(doc, tvar, qs + tuple(velocity_name(q) for q in qs))
        return ImplicitResiduals(chart, qs, _parse_vector(chart, doc["F"], "F"))

    from .mechanics import LagrangianSpec, SkinnerRuskSpec

    qs = tuple(doc["q"])
    chart = _chart(doc, tvar, qs + tuple(velocity_name(q) for q in qs))
    L = _with_path("L", lambda: E.parse_expr(doc["L"], chart.scope()))
    cls = LagrangianSpec if kind == "lagrangian" else SkinnerRuskSpec
    return cls(chart, qs, L)


def _time_functions_doc(chart: Chart) -> dict[str, str]:
    return {name: tf.text for name, tf in chart.time_functions.items()}


def serialize(system) -> dict[str, Any]:
    """Inverse of :func:`load_system`; expressions are re-printed canonically."""
    from .mechanics import LagrangianSpec, SkinnerRuskSpec

    chart = system.chart
    tvar = chart.time_name or next((tf.variable for tf in chart.time_functions.values()), "t")
    doc: dict[str, Any] = {"time_variable": tvar}
    if chart.parameters:
        doc["parameters"] = dict(chart.parameters)
    if chart.time_functions:
        doc["time_functions"] = _time_functions_doc(chart)
    if isinstance(system, LinSingSystem):
        doc["kind"] = "linearly_singular"
        doc["states"] = list(chart.state_names)
        doc["A"] = [[E.to_text(e) for e in row] for row in system.A]
        if system.time_dependent:
            doc["c"] = [E.to_text(e) for e in system.c]
        else:
            doc["autonomous"] = True
            doc["b"] = [E.to_text(e) for e in system.b]
            if system.time_state is not None:
                doc["time_state"] = system.time_state
    elif isinstance(system, SecondOrderSystem):
        doc["kind"] = "second_order"
        doc["states"] = list(system.q_names)
        doc["A"] = [[E.to_text(e) for e in row] for row in system.A]
        doc["c"] = [E.to_text(e) for e in system.c]
    elif isinstance(system, ImplicitResiduals):
        doc["kind"] = "implicit"
        doc["states"] = list(system.q_names)
        doc["F"] = [E.to_text(e) for e in system.F]
    elif isinstance(system, (LagrangianSpec, SkinnerRuskSpec)):
        doc["kind"] = "lagrangian" if isinstance(system, LagrangianSpec) else "skinner_rusk"
        doc["q"] = list(system.q_names)
        doc["L"] = E.to_text(system.L)
    else:
        raise TypeError(f"cannot serialize {type(system).__name__}")
    return {"kind": doc.pop("kind"), **doc}


# residuals -----------------------------------------------------------------

def residual(sys: LinSingSystem, point: Sequence[float], velocity: Sequence[float]) -> np.ndarray:
    """``A(point) velocity + c(point)`` for either sign convention.

    ``point`` lists every chart variable (time first when time-dependent);
    ``velocity`` has one entry per state.
    """
    point = [float(p) for p in point]
    velocity = np.asarray(velocity, dtype=float)
    if len(point) != len(sys.chart.variables):
        raise DimensionMismatch(f"point has {len(point)} entries, chart has {len(sys.chart.variables)}")
    if velocity.shape != (sys.nstates,):
        raise DimensionMismatch(f"velocity has shape {velocity.shape}, expected ({sys.nstates},)")
    vals = sys._float_fn(point)
    m, n = sys.nrows, sys.nstates
    A = np.array(vals[: m * n], dtype=float).reshape(m, n)
    c = -np.array(vals[m * n:], dtype=float)
    return A @ velocity + c


@dataclass
class SampleCheck:
    time: float
    residual: float
    ok: bool


def _fd_weights(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    return -h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))


def _columns(traj, names: Sequence[str]) -> np.ndarray:
    lookup = {n: i for i, n in enumerate(traj.names)}
    missing = [n for n in names if n not in lookup]
    if missing:
        raise DimensionMismatch(f"trajectory lacks columns {missing}")
    states = np.asarray(traj.states, dtype=float)
    return states[:, [lookup[n] for n in names]]


def check_solution_samples(sys, trajectory, tol: float = 1e-6) -> list[SampleCheck]:
    """Residuals of a sampled trajectory, with centered finite-difference velocities.

    ``trajectory`` needs ``times``, ``states`` and column ``names``.  One
    report per interior sample.
    """
    from .mechanics import LagrangianSpec, SkinnerRuskSpec, lagrangian_system, skinner_rusk_system

    t = np.asarray(trajectory.times, dtype=float)
    if len(t) < 3:
        raise TooFewSamples(f"need at least 3 samples, got {len(t)}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("trajectory times must be strictly increasing")
    w0, w1, w2 = _fd_weights(t)

    def deriv(cols):
        return w0[:, None] * cols[:-2] + w1[:, None] * cols[1:-1] + w2[:, None] * cols[2:]

    if isinstance(sys, LagrangianSpec):
        sys = lagrangian_system(sys)
    elif isinstance(sys, SkinnerRuskSpec):
        sys = skinner_rusk_system(sys)

    chart = sys.chart
    if chart.time_name is not None and chart.time_name in trajectory.names:
        times = _columns(trajectory, [chart.time_name])[:, 0]
    else:
        times = t
    inner = times[1:-1]
    out: list[SampleCheck] = []

    if isinstance(sys, LinSingSystem):
        X = _columns(trajectory, chart.state_names)
        dX = deriv(X)
        for i in range(len(inner)):
            point = ([inner[i]] if sys.time_dependent else []) + list(X[i + 1])
            r = residual(sys, point, dX[i])
            out.append(_report(t[i + 1], r, tol))
        return out
    if isinstance(sys, SecondOrderSystem):
        n = len(sys.q_names)
        Q = _columns(trajectory, sys.q_names)
        V = _columns(trajectory, sys.v_names)
        dQ, dV = deriv(Q), deriv(V)
        fn = E.compile_exprs([e for row in sys.A for e in row] + list(sys.c), "float")
        for i in range(len(inner)):
            vals = fn([inner[i]] + list(Q[i + 1]) + list(V[i + 1]))
            A = np.array(vals[: len(sys.A) * n]).reshape(len(sys.A), n)
            c = np.array(vals[len(sys.A) * n:])
            r = np.concatenate([A @ dV[i] + c, dQ[i] - V[i + 1]])
            out.append(_report(t[i + 1], r, tol))
        return out
    if isinstance(sys, ImplicitResiduals):
        Q = _columns(trajectory, sys.q_names)
        dQ = deriv(Q)
        fn = E.compile_exprs(list(sys.F), "float")
        for i in range(len(inner)):
            r = np.array(fn([inner[i]] + list(Q[i + 1]) + list(dQ[i])), dtype=float)
            out.append(_report(t[i + 1], r, tol))
        return out
    # frontend systems (autonomous, matrices over the full state)
    X = _columns(trajectory, sys.names)
    dX = deriv(X)
    for i in range(len(inner)):
        A, b = sys.matrices_float(X[i + 1])
        out.append(_report(t[i + 1], A @ dX[i] - b, tol))
    return out


def _report(time: float, r: np.ndarray, tol: float) -> SampleCheck:
    mag = float(np.max(np.abs(r))) if np.size(r) else 0.0
    return SampleCheck(float(time), mag, mag <= tol)
