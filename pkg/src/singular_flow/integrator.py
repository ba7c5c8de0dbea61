"""Fixed-step RK4 on a solution field with periodic projection onto the final manifold."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import SOLVED, AnalysisResult, project_to_level
from .errors import DimensionMismatch, OffManifold, ProjectionDiverged, SingularFlowError, StepRejected
from ._kernels import solve_square
from .jet import Jet

ACCEPT_X0 = 1e-6
UNIT_RATE_TOL = 1e-12


@dataclass
class Trajectory:
    names: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray
    drift: np.ndarray
    events: list[dict] = field(default_factory=list)

    @property
    def max_drift(self) -> float:
        return float(np.max(self.drift)) if len(self.drift) else 0.0

    def column(self, name: str) -> np.ndarray:
        return self.states[:, list(self.names).index(name)]


class _Field:
    """Field evaluation with a float fast path when no constraint levels exist."""

    def __init__(self, result: AnalysisResult):
        self.result = result
        self.tower = result.tower
        self.depth = result.depth
        self.system = result.system
        self.square = self.system.nrows == self.system.dim == self.tower.a_cap

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, float | None]:
        if self.depth == 0:
            A, b = self.system.matrices_float(x)
            if self.square:
                X, ok = solve_square(A, b)
                if ok:
                    return X, None
            return np.linalg.lstsq(A, b, rcond=None)[0], None
        X, lower, *_ = self.tower.field(Jet.constant(x), self.depth)
        drift = max((float(np.max(np.abs(v.primal))) for v in lower if v.shape[0]), default=0.0)
        return np.array(X.primal), drift

    def drift(self, x: np.ndarray) -> float:
        if self.depth == 0:
            return 0.0
        vals = self.result.constraint_values(x)
        return float(np.max(np.abs(vals))) if vals.size else 0.0


def integrate(result: AnalysisResult, x0, t_span: tuple[float, float], dt: float,
              project_every: int = 10) -> Trajectory:
    """Integrate the solution field of a solved analysis from ``x0``.

    ``x0`` lists every state; for systems with a time state it may omit that
    state, which is then set to ``t_span[0]``.  A start within 1e-6 of the
    final manifold is projected onto it (time held fixed); anything farther
    raises :class:`OffManifold`.
    """
    if result.status != SOLVED:
        raise SingularFlowError(f"cannot integrate: analysis status is {result.status}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if project_every < 1:
        raise ValueError("project_every must be at least 1")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    system = result.system
    N = system.dim
    ti = system.time_index
    x = np.array(x0, dtype=float).reshape(-1)
    if ti is not None and x.size == N - 1:
        x = np.insert(x, ti, t0)
    if x.size != N:
        raise DimensionMismatch(f"x0 has {x.size} entries, system has {N} states")
    if ti is not None and abs(x[ti] - t0) > 1e-12:
        raise ValueError(f"time state of x0 is {x[ti]}, expected t0 = {t0}")
    frozen = () if ti is None else (ti,)

    fieldfn = _Field(result)
    constraints = result.constraints()
    events: list[dict] = []
    start_drift = fieldfn.drift(x)
    if start_drift > ACCEPT_X0:
        raise OffManifold(f"initial point violates constraints by {start_drift:.3g}")
    if result.depth:
        try:
            x = project_to_level(x, constraints, result.tol, frozen=frozen)
        except ProjectionDiverged as err:
            raise OffManifold(f"initial point cannot be projected: {err}") from err

    steps = int(round((t1 - t0) / dt))
    if steps < 1:
        raise ValueError("t_span shorter than one step")
    h = (t1 - t0) / steps

    def F(y):
        try:
            X, d = fieldfn(y)
        except SingularFlowError as err:
            raise StepRejected(f"field evaluation failed at {y.tolist()}: {err}") from err
        if not np.all(np.isfinite(X)):
            raise StepRejected(f"non-finite field at {y.tolist()}")
        if ti is not None and abs(X[ti] - 1.0) > UNIT_RATE_TOL:
            raise StepRejected(f"time rate {X[ti]!r} differs from 1")
        return X, d

    times = np.empty(steps + 1)
    states = np.empty((steps + 1, N))
    drift = np.empty(steps + 1)
    times[0], states[0] = t0, x
    for n in range(steps):
        k1, d = F(x)
        drift[n] = d if d is not None else 0.0
        k2, _ = F(x + 0.5 * h * k1)
        k3, _ = F(x + 0.5 * h * k2)
        k4, _ = F(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (n + 1) * h
        if ti is not None:
            x[ti] = t  # remove accumulated roundoff of the unit-rate state
        if result.depth and ((n + 1) % project_every == 0 or n + 1 == steps):
            before = fieldfn.drift(x)
            try:
                y = project_to_level(x, constraints, result.tol, frozen=frozen)
            except ProjectionDiverged as err:
                raise StepRejected(f"projection failed at t = {t}: {err}") from err
            events.append({"step": n + 1, "time": t, "drift": before,
                           "displacement": float(np.max(np.abs(y - x)))})
            x = y
            drift[n + 1] = before
        times[n + 1], states[n + 1] = t, x
    if not (events and events[-1]["step"] == steps):
        drift[steps] = fieldfn.drift(x)
    return Trajectory(tuple(system.names), times, states, drift, events)


# CSV ---------------------------------------------------------------------------

def write_csv(traj: Trajectory, dest, time_state: str | None = None) -> None:
    """Header: state names plus ``drift``; a ``time`` column leads when no state is time.

    ``dest`` is a path or an open text stream.
    """
    lead = [] if time_state is not None else ["time"]
    if hasattr(dest, "write"):
        _write_rows(traj, dest, lead)
        return
    with open(dest, "w", newline="") as fh:
        _write_rows(traj, fh, lead)


def _write_rows(traj: Trajectory, fh, lead: list[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(lead + list(traj.names) + ["drift"])
    for t, s, d in zip(traj.times, traj.states, traj.drift):
        w.writerow(([repr(float(t))] if lead else []) + [repr(float(v)) for v in s] + [repr(float(d))])


def read_csv(path, time_name: str | None = None) -> Trajectory:
    """Inverse of :func:`write_csv`; ``time_name`` picks the time column."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    cols = list(header)
    drift = data[:, cols.index("drift")] if "drift" in cols else np.zeros(len(data))
    if "time" in cols:
        times = data[:, cols.index("time")]
    elif time_name is not None and time_name in cols:
        times = data[:, cols.index(time_name)]
    else:
        raise ValueError(f"{path}: no time column (expected 'time' or {time_name!r})")
    names = [c for c in cols if c not in ("time", "drift")]
    states = data[:, [cols.index(c) for c in names]]
    return Trajectory(tuple(names), times, states, drift)
