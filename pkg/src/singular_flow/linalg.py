"""Pointwise dense linear algebra by pivoted Gauss-Jordan elimination.

Elimination (rather than an SVD) is used so the same code runs over
:class:`~singular_flow.jet.Jet` carriers: frames of ``Ker A`` and
``Ker A^T`` and particular solutions come out with exact derivatives.

Pivot rule: columns are scanned left to right; within a column the pivot row
is the unused row of largest absolute primal value, accepted only if it
exceeds ``max(tol * max|A|, atol)``.  Ties go to the lower row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite, RankDriftError
from ._kernels import eliminate_kernel
from .jet import Jet, as_jet, mul_data, subset_pairs as _subset_pairs

DEFAULT_TOL = 1e-10


def _first(batch_ndim: int) -> tuple:
    return (0,) * batch_ndim


@dataclass
class Elimination:
    """Reduced form ``E A = R`` of a (jet) matrix with its pivot list."""

    pivots: list[tuple[int, int]]
    reduced: Jet  # (m, n, *batch)
    transform: Jet  # (m, m, *batch)
    nrows: int
    ncols: int

    @property
    def rank(self) -> int:
        return len(self.pivots)

    @property
    def pivot_rows(self) -> list[int]:
        return [r for r, _ in self.pivots]

    @property
    def free_rows(self) -> list[int]:
        used = set(self.pivot_rows)
        return [i for i in range(self.nrows) if i not in used]

    @property
    def free_cols(self) -> list[int]:
        used = {c for _, c in self.pivots}
        return [j for j in range(self.ncols) if j not in used]

    def left_basis(self) -> Jet:
        """Rows ``s`` with ``s A = 0``; shape ``(m - rank, m, *batch)``."""
        return self.transform[self.free_rows] if self.free_rows else _empty(self.transform, (0, self.nrows))

    def right_basis(self) -> Jet:
        """Columns of ``Ker A`` as rows; shape ``(n - rank, n, *batch)``."""
        free = self.free_cols
        batch = self.reduced.shape[2:]
        k = self.reduced.k
        out = np.zeros((len(free), self.ncols) + batch + (1 << k,))
        for a, f in enumerate(free):
            out[a, f, ..., 0] = 1.0
            for r, c in self.pivots:
                out[a, c] = -self.reduced.data[r, f]
        return Jet(out, k)

    def apply(self, b: Jet) -> Jet:
        """``E b`` for a jet vector ``b`` of shape ``(m, *batch)``."""
        E = self.transform
        k = max(E.k, b.k)
        Ed = E.promote(k).data
        bd = b.promote(k).data
        return Jet(mul_data(Ed, bd[None], k).sum(axis=1), k)

    def particular(self, b: Jet) -> tuple[Jet, Jet]:
        """Basic solution (free variables zero) and the reduced residual rows."""
        Eb = self.apply(b)
        batch = Eb.shape[1:]
        x = np.zeros((self.ncols,) + batch + (1 << Eb.k,))
        for r, c in self.pivots:
            x[c] = Eb.data[r]
        residual = Eb[self.free_rows] if self.free_rows else _empty(Eb, (0,))
        return Jet(x, Eb.k), residual


def _empty(like: Jet, lead: tuple) -> Jet:
    return Jet(np.zeros(lead + like.shape[len(lead):] + (1 << like.k,)), like.k)


def eliminate(A: Jet, tol: float = DEFAULT_TOL, atol: float = 0.0,
              max_rank: int | None = None, require_rank: int | None = None) -> Elimination:
    """Gauss-Jordan reduce a jet matrix of shape ``(m, n, *batch)``.

    ``max_rank`` stops after that many pivots; ``require_rank`` raises
    :class:`RankDriftError` if fewer pivots clear the threshold.
    """
    A = as_jet(A)
    m, n = A.shape[:2]
    batch = A.shape[2:]
    k = A.k
    W = 1 << k
    B = int(np.prod(batch)) if batch else 1
    P0 = A.data[(slice(None), slice(None)) + _first(len(batch)) + (0,)]
    if not np.isfinite(P0).all():
        raise NonFinite("matrix has NaN or Inf entries")
    norm = float(np.abs(P0).max()) if P0.size else 0.0
    thresh = max(tol * norm, atol)
    limit = min(m, n) if max_rank is None else min(max_rank, m, n)
    M = np.zeros((m, n + m, B, W))
    M[:, :n] = A.data.reshape(m, n, B, W)
    idx = np.arange(m)
    M[idx, n + idx, :, 0] = 1.0
    left, right, target = _subset_pairs(k)
    piv = eliminate_kernel(M, n, thresh, limit, left, right, target)
    pivots = [(int(r), int(c)) for r, c in piv]
    M = M.reshape((m, n + m) + batch + (W,))
    if require_rank is not None and len(pivots) < require_rank:
        raise RankDriftError(f"rank dropped to {len(pivots)} (expected {require_rank})")
    return Elimination(pivots, Jet(M[:, :n], k), Jet(M[:, n:], k), m, n)


def min_norm(elim: Elimination, b: Jet, tol: float = DEFAULT_TOL) -> tuple[Jet, Jet, Jet]:
    """Minimal-norm solution of the consistent part of ``A x = b``.

    Returns ``(x, nullspace_rows, residual_rows)``.
    """
    xp, residual = elim.particular(b)
    N = elim.right_basis()
    d = N.shape[0]
    if d == 0:
        return xp, N, residual
    k = max(xp.k, N.k)
    Nd = N.promote(k).data
    xd = xp.promote(k).data
    gram = mul_data(Nd[:, None], Nd[None, :], k).sum(axis=2)  # (d, d, *batch)
    rhs = mul_data(Nd, xd[None], k).sum(axis=1)  # (d, *batch)
    if d == 1:
        if not np.any(gram[0, 0][..., 0]):
            raise RankDriftError("degenerate kernel frame")
        y = Jet(rhs, k) * Jet(gram[0, 0], k).reciprocal()
    else:
        g = eliminate(Jet(gram, k), tol=tol, require_rank=d)
        y, _ = g.particular(Jet(rhs, k))
    corr = mul_data(Nd, y.data[:, None], k).sum(axis=0)
    return Jet(xd - corr, k), N, residual


# float-level public API ----------------------------------------------------

@dataclass
class NullspaceResult:
    rank: int
    right_basis: list[np.ndarray]
    left_basis: list[np.ndarray]
    pivot_pattern: list[tuple[int, int]]


@dataclass
class Consistent:
    particular: np.ndarray
    nullspace: list[np.ndarray] = field(default_factory=list)
    consistent = True


@dataclass
class Inconsistent:
    violated_row_indices: list[int]
    residuals: np.ndarray
    consistent = False


def _float_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise NonFinite("matrix has NaN or Inf entries")
    return A


def rank_nullspaces(A, tol: float = DEFAULT_TOL) -> NullspaceResult:
    """Rank and bases of ``Ker A`` and ``Ker A^T`` of a real matrix."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = _float_matrix(A)
    e = eliminate(Jet.constant(A), tol=tol)
    right = e.right_basis().primal
    left = e.left_basis().primal
    return NullspaceResult(e.rank, [np.array(v) for v in right], [np.array(s) for s in left], list(e.pivots))


def solve_consistent(A, b, tol: float = DEFAULT_TOL):
    """Solve ``A x = b``; returns :class:`Consistent` or :class:`Inconsistent`."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = _float_matrix(A)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"b has length {b.shape[0]}, A has {A.shape[0]} rows")
    if not np.all(np.isfinite(b)):
        raise NonFinite("rhs has NaN or Inf entries")
    e = eliminate(Jet.constant(A), tol=tol)
    x, N, residual = min_norm(e, Jet.constant(b), tol)
    scale = max(float(np.max(np.abs(A), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    res = residual.primal
    bad = [e.free_rows[i] for i in np.flatnonzero(np.abs(res) > tol * scale)]
    if bad:
        return Inconsistent(bad, A @ x.primal - b)
    return Consistent(np.array(x.primal), [np.array(v) for v in N.primal])
