"""Turn time-dependent and second-order systems into autonomous ones.

Every construction puts time first among the new states and appends the
row ``tdot = 1``; the new system records that state as its ``time_state``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import expr as E
from .errors import AlreadyAutonomous, DimensionMismatch
from .system import Chart, LinSingSystem, SecondOrderSystem


def vector_extension(c, T) -> np.ndarray:
    """Matrix of the affine map ``x -> c + T x`` acting on ``(1, x)``."""
    c = np.asarray(c, dtype=float).reshape(-1)
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != c.shape[0]:
        raise DimensionMismatch(f"c has length {c.shape[0]} but T has shape {T.shape}")
    m, n = T.shape
    out = np.zeros((m + 1, n + 1))
    out[0, 0] = 1.0
    out[1:, 0] = c
    out[1:, 1:] = T
    return out


def _autonomous_chart(chart: Chart) -> Chart:
    if chart.time_name is None:
        raise AlreadyAutonomous("system has no separate time variable")
    return Chart(None, (chart.time_name,) + chart.state_names, chart.parameters, chart.time_functions)


def _unit_time_row(n: int) -> tuple[E.Expr, ...]:
    return (E.ONE,) + (E.ZERO,) * n


def _remap_rows(rows, names):
    return tuple(tuple(E.remap(e, names) for e in row) for row in rows)


def homogenize(sys: LinSingSystem) -> LinSingSystem:
    """Vector-hull construction: rows ``c tdot + A qdot = 0`` plus ``tdot = 1``."""
    if not sys.time_dependent:
        raise AlreadyAutonomous("system is already autonomous")
    chart = _autonomous_chart(sys.chart)
    names = chart.state_names
    A = _remap_rows(sys.A, names)
    c = [E.remap(e, names) for e in sys.c]
    rows = [(c[a],) + A[a] for a in range(sys.nrows)]
    rows.append(_unit_time_row(sys.nstates))
    # stored as (A, c) with c = -b; b is 0 on the equation rows and 1 on the time row
    cvec = (E.ZERO,) * sys.nrows + (E.Const(-1.0),)
    return LinSingSystem(chart, tuple(rows), cvec, False, names[0])


def _gamma_exprs(gamma, chart: Chart, n: int) -> list[E.Expr]:
    if gamma is None:
        return [E.ZERO] * n
    if len(gamma) != n:
        raise DimensionMismatch(f"jet field has {len(gamma)} components, expected {n}")
    scope = chart.scope()
    out = []
    for g in gamma:
        out.append(E.parse_expr(g, scope) if isinstance(g, (str, int, float)) else g)
    return out


def jet_field_autonomize(sys: LinSingSystem, gamma: Sequence | None = None) -> LinSingSystem:
    """Jet-field construction: ``A (qdot - tdot Gamma) = -A Gamma - c`` plus ``tdot = 1``.

    ``gamma`` lists one expression (or string) per state over ``(t, q)``;
    ``None`` means ``Gamma = 0``.
    """
    if not sys.time_dependent:
        raise AlreadyAutonomous("system is already autonomous")
    n = sys.nstates
    G = _gamma_exprs(gamma, sys.chart, n)
    chart = _autonomous_chart(sys.chart)
    names = chart.state_names
    A = _remap_rows(sys.A, names)
    G = [E.remap(g, names) for g in G]
    c = [E.remap(e, names) for e in sys.c]
    rows, cvec = [], []
    for a in range(sys.nrows):
        AG = E.total([E.mul(A[a][j], G[j]) for j in range(n)])
        rows.append((E.neg(AG),) + A[a])
        # A q' - tdot A G = -A G - c  ->  stored c entry is A G + c
        cvec.append(E.add(AG, c[a]))
    rows.append(_unit_time_row(n))
    cvec.append(E.Const(-1.0))
    return LinSingSystem(chart, tuple(rows), tuple(cvec), False, names[0])


def second_order_reduce(sys: SecondOrderSystem, mode: str = "vector_hull",
                        gamma: Sequence | None = None) -> LinSingSystem:
    """First-order autonomous system on ``(t, q, v)``.

    Row blocks, in order: the equation rows, ``tdot = 1``, and
    ``qdot - v tdot = 0``.  ``mode="jet_field"`` uses ``gamma`` (one
    expression per acceleration component over ``(t, q, v)``; default 0).
    """
    if mode not in ("vector_hull", "jet_field"):
        raise ValueError(f"unknown mode {mode!r}")
    n = len(sys.q_names)
    chart = _autonomous_chart(sys.chart)
    names = chart.state_names  # t, q..., v...
    A = _remap_rows(sys.A, names)
    c = [E.remap(e, names) for e in sys.c]
    zeros_q = (E.ZERO,) * n
    rows, cvec = [], []
    if mode == "vector_hull":
        for a in range(len(A)):
            rows.append((c[a],) + zeros_q + A[a])
            cvec.append(E.ZERO)
    else:
        G = [E.remap(g, names) for g in _gamma_exprs(gamma, sys.chart, n)]
        for a in range(len(A)):
            AG = E.total([E.mul(A[a][j], G[j]) for j in range(n)])
            rows.append((E.neg(AG),) + zeros_q + A[a])
            cvec.append(E.add(AG, c[a]))
    rows.append(_unit_time_row(2 * n))
    cvec.append(E.Const(-1.0))
    for i in range(n):
        v = E.Var(names[1 + n + i], 1 + n + i)
        row = [E.ZERO] * (2 * n + 1)
        row[0] = E.neg(v)
        row[1 + i] = E.ONE
        rows.append(tuple(row))
        cvec.append(E.ZERO)
    return LinSingSystem(chart, tuple(rows), tuple(cvec), False, names[0])


def autonomize(sys, mode: str = "jet_field", gamma: Sequence | None = None) -> LinSingSystem:
    """Dispatch on system type; autonomous systems pass through unchanged."""
    if isinstance(sys, SecondOrderSystem):
        return second_order_reduce(sys, mode, gamma)
    if isinstance(sys, LinSingSystem):
        if not sys.time_dependent:
            return sys
        if mode == "vector_hull":
            return homogenize(sys)
        return jet_field_autonomize(sys, gamma)
    raise TypeError(f"cannot autonomize {type(sys).__name__}")
