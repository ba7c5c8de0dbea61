"""Constraint algorithm for autonomous linearly singular systems ``A(x) xdot = b(x)``.

Constraints are never written down as formulas.  Level 0 holds the
functions ``<s, b>`` for a frame ``s`` of the left kernel of ``A``.  Level
``k`` holds ``<sigma, X0 . Phi>``: derivatives of all earlier levels along the
particular solution ``X0``, contracted with a frame ``sigma`` of the left
kernel of the tangency matrix ``T = (Gamma_mu . Phi)``.  Everything is
evaluated on jets: the derivatives needed at level ``k`` come from one call of
the level-``k-1`` evaluation at the seeded point ``x + eps V`` with
``V in {X0, Gamma_1, ...}``, so each extra level adds one tag.

Elimination pivots are chosen locally at each point, but the rank used for
``A`` and for every tangency matrix is fixed per analysis from the ranks seen
at the projected samples.  This keeps frames smooth across a neighbourhood
of the constraint manifold even when the rank of ``A`` drops on it.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import expr as E
from .errors import (DomainError, JacobianRankDeficient, NonFinite, OffManifold, ProjectionDiverged,
                     RankDriftError, RankDriftWarning, SingularFlowError)
from .jet import Jet, mul_data, seed, strip, tangent
from .linalg import eliminate, min_norm

DEFAULT_TOL = 1e-9
DEFAULT_RANK_TOL = 1e-10
SOLVED, INCONSISTENT, MAX_ITERATIONS, RANK_DRIFT = "Solved", "Inconsistent", "MaxIterations", "RankDrift"


def default_seed() -> int:
    return int(os.environ.get("SINGULAR_FLOW_SEED", "42"))


def _numeric_rank(M: np.ndarray, rank_tol: float) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * max(s[0], 1.0)))


def _contract(rows: Jet, vec: Jet) -> Jet:
    """``rows[a, c] * vec[c]`` summed over ``c``; rows ``(p, C, *b)``, vec ``(C, *b)``."""
    k = max(rows.k, vec.k)
    return Jet(mul_data(rows.promote(k).data, vec.promote(k).data[None], k).sum(axis=1), k)


class Tower:
    """Evaluator of accepted constraint levels with fixed rank caps.

    ``t_caps[j]`` is the rank of the tangency matrix built from levels
    ``< j`` (entry 0 is unused).
    """

    def __init__(self, system, a_cap: int, t_caps: Sequence[int] = (0,), tol: float = DEFAULT_RANK_TOL):
        self.system = system
        self.a_cap = a_cap
        self.t_caps = list(t_caps)
        self.tol = tol

    def copy(self) -> "Tower":
        return Tower(self.system, self.a_cap, list(self.t_caps), self.tol)

    def _eliminate_A(self, x: Jet):
        A, b = self.system.matrices(x)
        return eliminate(A, tol=self.tol, max_rank=self.a_cap), b

    def primary(self, x: Jet) -> Jet:
        elim, b = self._eliminate_A(x)
        return _contract(elim.left_basis(), b)

    def step(self, x: Jet, depth: int):
        """Values of levels ``< depth`` plus ``X0``, ``Gamma`` and the derivative table.

        The table ``D`` has shape ``(C, 1 + r, *batch)``: column 0 holds
        derivatives along ``X0``, the rest along the kernel frame.
        """
        elim, b = self._eliminate_A(x)
        X0, G, _ = min_norm(elim, b, self.tol)
        k = x.k
        X0, G = X0.promote(max(k, X0.k)), G.promote(max(k, G.k))
        r = G.shape[0]
        batch = x.shape[1:]
        if depth == 0:
            return [], X0, G, Jet(np.zeros((0, 1 + r) + batch + (1 << k,)), k)
        N = x.shape[0]
        V = np.concatenate([X0.data[:, None], np.moveaxis(G.data, 0, 1)], axis=1)
        base = np.broadcast_to(x.data[:, None], (N, 1 + r) + batch + (1 << k,))
        inner = self.values(seed(Jet(base, k), Jet(V, k)), depth)
        lower = [strip(v, k)[:, 0] for v in inner]
        D = Jet(np.concatenate([tangent(v, k).data for v in inner], axis=0), k)
        return lower, X0, G, D

    def candidates(self, D: Jet, cap: int) -> Jet:
        T = D[:, 1:]
        sigma = eliminate(T, tol=self.tol, max_rank=cap).left_basis()
        return _contract(sigma, D[:, 0])

    def values(self, x: Jet, depth: int) -> list[Jet]:
        """Constraint values of levels ``0 .. depth-1`` at ``x``."""
        if depth == 0:
            return []
        if depth == 1:
            return [self.primary(x)]
        lower, _, _, D = self.step(x, depth - 1)
        return lower + [self.candidates(D, self.t_caps[depth - 1])]

    def field(self, x: Jet, depth: int):
        """``(X, lower values, X0, Gamma, f)`` with ``X = X0 + f . Gamma``."""
        lower, X0, G, D = self.step(x, depth)
        T = D[:, 1:]
        h = -D[:, 0]
        r = G.shape[0]
        if r == 0:
            return X0, lower, X0, G, Jet(np.zeros((0,) + X0.shape[1:] + (1 << X0.k,)), X0.k)
        elim = eliminate(T, tol=self.tol, max_rank=self.t_caps[depth])
        f, _, _ = min_norm(elim, h, self.tol)
        k = max(f.k, G.k)
        corr = mul_data(f.promote(k).data[:, None], G.promote(k).data, k).sum(axis=0)
        X = Jet(X0.promote(k).data + corr, k)
        return X, lower, X0, G, f


# constraint evaluators -----------------------------------------------------

class ConstraintEvaluator:
    """Vector of constraint functions evaluable on jets."""

    provenance: str = ""

    def jet_values(self, x: Jet) -> Jet:
        raise NotImplementedError

    def __call__(self, point) -> np.ndarray:
        return np.array(self.jet_values(Jet.constant(np.asarray(point, dtype=float))).primal)

    def value_and_jacobian(self, point) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(point, dtype=float)
        n = p.size
        x = seed(Jet.constant(np.broadcast_to(p[:, None], (n, n)).copy()), np.eye(n))
        d = self.jet_values(x).promote(1).data
        d = np.broadcast_to(d, d.shape[:1] + (n, 2))
        return np.array(d[:, 0, 0]), np.array(d[:, :, 1])


class LevelConstraints(ConstraintEvaluator):
    """Selected levels of a tower."""

    def __init__(self, tower: Tower, depth: int, levels: Sequence[int] | None = None):
        self.tower = tower
        self.depth = depth
        self.levels = list(range(depth)) if levels is None else list(levels)
        self.provenance = f"levels {self.levels}"

    def jet_values(self, x: Jet) -> Jet:
        vals = self.tower.values(x, self.depth)
        chosen = [vals[i] for i in self.levels]
        if not chosen:
            return Jet(np.zeros((0,) + x.shape[1:] + (1 << x.k,)), x.k)
        k = max(v.k for v in chosen)
        return Jet(np.concatenate([v.promote(k).data for v in chosen], axis=0), k)


class ExprConstraints(ConstraintEvaluator):
    """Constraint functions given as expressions over the state chart."""

    def __init__(self, exprs: Sequence, chart: Sequence[str] | E.Scope | None = None):
        """``exprs`` are Expr trees, or strings parsed against ``chart``."""
        self.exprs = [E.parse_expr(e, chart) if isinstance(e, str) else e for e in exprs]
        self._fn = E.compile_exprs(self.exprs, "jet")
        self.provenance = "; ".join(E.to_text(e) for e in self.exprs)

    def jet_values(self, x: Jet) -> Jet:
        batch = x.shape[1:]
        out = []
        for v in self._fn(x):
            v = v if isinstance(v, Jet) else Jet.constant(v, x.k)
            out.append(np.broadcast_to(v.promote(x.k).data, batch + (1 << x.k,)))
        return Jet(np.stack(out), x.k)


class _Stacked(ConstraintEvaluator):
    def __init__(self, parts: Sequence[ConstraintEvaluator]):
        self.parts = list(parts)

    def jet_values(self, x: Jet) -> Jet:
        vals = [p.jet_values(x) for p in self.parts]
        k = max(v.k for v in vals)
        return Jet(np.concatenate([v.promote(k).data for v in vals], axis=0), k)


def _as_evaluator(constraints) -> ConstraintEvaluator:
    if isinstance(constraints, ConstraintEvaluator):
        return constraints
    return _Stacked(constraints)


# projection ----------------------------------------------------------------

def project_to_level(point, constraints, tol: float = DEFAULT_TOL, max_iter: int = 50,
                     frozen: Sequence[int] = ()) -> np.ndarray:
    """Gauss-Newton projection onto the common zero set of ``constraints``.

    Steps are minimal-norm least-squares corrections, so redundant constraint
    rows are harmless.  Coordinates listed in ``frozen`` are not moved.
    """
    ev = _as_evaluator(constraints)
    x = np.array(point, dtype=float)
    free = np.ones(x.size, dtype=bool)
    free[list(frozen)] = False
    target = 1e-3 * tol
    try:
        for _ in range(max_iter + 1):
            phi, J = ev.value_and_jacobian(x)
            if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(J))):
                raise ProjectionDiverged("non-finite constraint values during projection")
            err = float(np.max(np.abs(phi))) if phi.size else 0.0
            if err <= target:
                return x
            Jf = J[:, free]
            if not np.any(Jf):
                raise JacobianRankDeficient(f"constraint Jacobian vanishes at residual {err:.3g}")
            dx = np.linalg.lstsq(Jf, phi, rcond=None)[0]
            if err <= tol and np.max(np.abs(dx)) <= 1e-14 * (1.0 + np.max(np.abs(x))):
                return x
            x[free] -= dx
    except (DomainError, NonFinite, RankDriftError, np.linalg.LinAlgError, FloatingPointError) as err:
        raise ProjectionDiverged(f"projection failed: {err}") from err
    phi = ev(x)
    if phi.size == 0 or np.max(np.abs(phi)) <= tol:
        return x
    raise ProjectionDiverged(f"no convergence in {max_iter} iterations (residual {np.max(np.abs(phi)):.3g})")


# results ---------------------------------------------------------------------

@dataclass
class ConstraintLevel:
    index: int
    kind: str  # "primary" or "tangency"
    count: int
    samples: np.ndarray
    effective_rank: int
    tangency_rank: int | None = None
    max_candidate: float = 0.0

    @property
    def provenance(self) -> str:
        if self.kind == "primary":
            return "left kernel of A contracted with b"
        return f"left kernel of the tangency matrix (rank {self.tangency_rank}) on derivatives along X0"


@dataclass
class SolutionField:
    tower: Tower
    depth: int
    tol: float = DEFAULT_TOL

    def decomposition(self, point) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(X0, Gamma rows, f)`` with gauge parameters at 0."""
        _, _, X0, G, f = self.tower.field(Jet.constant(np.asarray(point, dtype=float)), self.depth)
        return np.array(X0.primal), np.array(G.primal), np.array(f.primal)

    def evaluate(self, point, check: bool = True) -> np.ndarray:
        X, lower, *_ = self.tower.field(Jet.constant(np.asarray(point, dtype=float)), self.depth)
        if check and lower:
            worst = max((float(np.max(np.abs(v.primal))) for v in lower if v.shape[0]), default=0.0)
            if worst > 10 * self.tol:
                raise OffManifold(f"constraint value {worst:.3g} exceeds {10 * self.tol:.3g}")
        return np.array(X.primal)

    __call__ = evaluate


@dataclass
class AnalysisResult:
    system: object
    status: str
    levels: list[ConstraintLevel]
    tower: Tower
    samples: np.ndarray
    gauge_dimension: int | None = None
    multiplier_count: int | None = None
    inconsistent_level: int | None = None
    message: str = ""
    tol: float = DEFAULT_TOL
    solution_field: SolutionField | None = None

    @property
    def depth(self) -> int:
        return len(self.levels)

    def constraints(self, levels: Sequence[int] | None = None) -> LevelConstraints:
        return LevelConstraints(self.tower, self.depth, levels)

    def constraint_values(self, point) -> np.ndarray:
        return self.constraints()(point)


def evaluate_solution_field(result: AnalysisResult, point, check: bool = True) -> np.ndarray:
    if result.status != SOLVED or result.solution_field is None:
        raise SingularFlowError(f"no solution field: analysis status is {result.status}")
    return result.solution_field.evaluate(point, check)


# primary constraints -------------------------------------------------------

def primary_constraint_values(system, point, reference_pattern=None, with_gradient: bool = False,
                              rank_tol: float = DEFAULT_RANK_TOL):
    """``<s, b>`` for the left-kernel frame of ``A`` at ``point``.

    With ``with_gradient`` returns ``(values, jacobian)``.  Warns with
    :class:`RankDriftWarning` if the pivot pattern differs from
    ``reference_pattern``.
    """
    p = np.asarray(point, dtype=float)
    A, _ = system.matrices_float(p)
    elim = eliminate(Jet.constant(A), tol=rank_tol)
    if reference_pattern is not None and list(reference_pattern) != list(elim.pivots):
        warnings.warn(f"pivot pattern {elim.pivots} differs from reference {list(reference_pattern)}",
                      RankDriftWarning, stacklevel=2)
    ev = LevelConstraints(Tower(system, elim.rank, tol=rank_tol), 1)
    if with_gradient:
        return ev.value_and_jacobian(p)
    return ev(p)


# the algorithm ---------------------------------------------------------------

def sample_cloud(seeds, count: int = 8, radius: float = 1e-2, rng: np.random.Generator | None = None,
                 frozen: Sequence[int] = ()) -> np.ndarray:
    """Seeds plus ``count`` Gaussian perturbations of each."""
    rng = np.random.default_rng(default_seed()) if rng is None else rng
    out = []
    for s in np.atleast_2d(np.asarray(seeds, dtype=float)):
        out.append(s)
        for _ in range(count):
            d = rng.normal(scale=radius, size=s.shape)
            d[list(frozen)] = 0.0
            out.append(s + d)
    return np.array(out)


class _Stop(Exception):
    def __init__(self, status: str, message: str, level: int | None = None):
        super().__init__(message)
        self.status = status
        self.level = level


def _A_rank(system, x, rank_tol) -> int:
    A, _ = system.matrices_float(x)
    return _numeric_rank(A, rank_tol)


def _common(ranks: list[int], what: str) -> int:
    if len(set(ranks)) > 1:
        raise _Stop(RANK_DRIFT, f"rank of {what} varies across samples: {sorted(set(ranks))}")
    return ranks[0]


def _T_rank(tower: Tower, x, depth: int, rank_tol: float) -> int:
    _, _, _, D = tower.step(Jet.constant(x), depth)
    return _numeric_rank(np.array(D.primal[:, 1:]), rank_tol)


def _project_all(samples, ev, tol) -> tuple[np.ndarray, list[str]]:
    kept, errors = [], []
    for s in samples:
        try:
            kept.append(project_to_level(s, ev, tol))
        except ProjectionDiverged as err:
            errors.append(str(err))
    return np.array(kept), errors


def _dedupe(samples: np.ndarray) -> np.ndarray:
    if len(samples) == 0:
        return samples
    _, idx = np.unique(np.round(samples, 12), axis=0, return_index=True)
    return samples[np.sort(idx)]


def run_constraint_algorithm(system, seeds, tol: float = DEFAULT_TOL, rank_tol: float = DEFAULT_RANK_TOL,
                             max_levels: int | None = None, samples_per_seed: int = 8,
                             radius: float = 1e-2, rng: np.random.Generator | None = None) -> AnalysisResult:
    """Build constraint levels until the tangency system closes.

    ``seeds`` are points of the state chart near the expected manifold.
    """
    N = system.dim
    max_levels = N + 1 if max_levels is None else max_levels
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise ValueError("at least one seed point is required")
    if seeds.shape[1] != N:
        raise ValueError(f"seed has {seeds.shape[1]} coordinates, system has {N}")
    samples = sample_cloud(seeds, samples_per_seed, radius, rng)
    levels: list[ConstraintLevel] = []
    a_ranks = [_A_rank(system, s, rank_tol) for s in samples]
    tower = Tower(system, max(a_ranks), [0], rank_tol)

    def result(status, message="", level=None):
        return AnalysisResult(system, status, levels, tower, samples, inconsistent_level=level,
                              message=message, tol=tol)

    def accept(kind, count, t_rank, biggest):
        nonlocal samples
        depth = len(levels) + 1
        ev = LevelConstraints(tower, depth)
        projected, errors = _project_all(samples, ev, tol)
        if len(projected) == 0:
            raise _Stop(INCONSISTENT, f"level {depth - 1} has no zero near the seeds: {errors[0]}", depth - 1)
        samples = _dedupe(projected)
        levels.append(ConstraintLevel(depth - 1, kind, count, samples, 0, t_rank, biggest))
        _refine_caps()
        for lev in levels:
            lev.samples = samples
        jac_ranks = [_numeric_rank(LevelConstraints(tower, depth).value_and_jacobian(s)[1], rank_tol)
                     for s in samples]
        levels[-1].effective_rank = max(jac_ranks)

    def _refine_caps():
        nonlocal samples
        for _ in range(5):
            changed = False
            a = _common([_A_rank(system, s, rank_tol) for s in samples], "A")
            if a != tower.a_cap:
                tower.a_cap, changed = a, True
            for j in range(1, len(levels)):
                t = _common([_T_rank(tower, s, j, rank_tol) for s in samples], f"the level-{j} tangency matrix")
                if t != tower.t_caps[j]:
                    tower.t_caps[j], changed = t, True
                    levels[j].tangency_rank = t
            if not changed:
                return
            projected, errors = _project_all(samples, LevelConstraints(tower, len(levels)), tol)
            if len(projected) == 0:
                raise _Stop(INCONSISTENT, f"re-projection failed: {errors[0]}", len(levels) - 1)
            samples = _dedupe(projected)
        raise _Stop(RANK_DRIFT, "rank caps did not stabilise")

    try:
        prim = [tower.primary(Jet.constant(s)).primal for s in samples]
        biggest = max((float(np.max(np.abs(v))) for v in prim if v.size), default=0.0)
        if biggest > tol:
            accept("primary", len(prim[0]), None, biggest)
        else:
            # no projection will happen, so the raw samples must already agree
            _common(a_ranks, "A")
        while True:
            depth = len(levels)
            if depth == 0:
                tower.t_caps = [0]
                break
            t = _common([_T_rank(tower, s, depth, rank_tol) for s in samples], f"the level-{depth} tangency matrix")
            while len(tower.t_caps) <= depth:
                tower.t_caps.append(0)
            tower.t_caps[depth] = t
            cand = []
            for s in samples:
                _, _, _, D = tower.step(Jet.constant(s), depth)
                cand.append(tower.candidates(D, t).primal)
            biggest = max((float(np.max(np.abs(v))) for v in cand if v.size), default=0.0)
            if biggest <= tol:
                break
            if depth >= max_levels:
                raise _Stop(MAX_ITERATIONS, f"still finding constraints after {max_levels} levels")
            accept("tangency", len(cand[0]), t, biggest)
    except _Stop as stop:
        return result(stop.status, str(stop), stop.level)
    except (DomainError, NonFinite, RankDriftError) as err:
        return result(RANK_DRIFT if isinstance(err, RankDriftError) else INCONSISTENT, str(err),
                      len(levels) if not isinstance(err, RankDriftError) else None)

    depth = len(levels)
    r = N - tower.a_cap
    res = result(SOLVED)
    res.multiplier_count = tower.t_caps[depth]
    res.gauge_dimension = r - res.multiplier_count
    res.solution_field = SolutionField(tower, depth, tol)
    return res


# report ------------------------------------------------------------------------

def _num(v: float) -> float:
    return float(f"{float(v):.17g}")


def report(result: AnalysisResult, field_values: bool = False) -> dict:
    """Deterministic JSON-ready summary of an analysis."""
    names = list(result.system.names)
    out: dict = {
        "status": result.status,
        "states": names,
        "levels": [],
        "gauge_dimension": result.gauge_dimension,
        "multiplier_count": result.multiplier_count,
    }
    if result.inconsistent_level is not None:
        out["inconsistent_level"] = result.inconsistent_level
    if result.message:
        out["message"] = result.message
    for lev in result.levels:
        vals = LevelConstraints(result.tower, result.depth, [lev.index])
        entry = {
            "index": lev.index,
            "kind": lev.kind,
            "constraint_count": lev.count,
            "effective_rank": lev.effective_rank,
            "max_candidate_value": _num(lev.max_candidate),
            "provenance": lev.provenance,
            "samples": [[_num(v) for v in s] for s in lev.samples],
        }
        try:
            entry["sample_values"] = [[_num(v) for v in vals(s)] for s in lev.samples]
        except SingularFlowError:
            pass
        if lev.tangency_rank is not None:
            entry["tangency_rank"] = lev.tangency_rank
        out["levels"].append(entry)
    if field_values and result.solution_field is not None:
        out["field"] = [
            {"point": [_num(v) for v in s], "velocity": [_num(v) for v in result.solution_field.evaluate(s, False)]}
            for s in result.samples
        ]
    return out
