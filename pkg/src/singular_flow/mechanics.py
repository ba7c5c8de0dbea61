"""Autonomous systems built from a Lagrangian.

Both frontends assemble their two-form pointwise from derivatives of ``L``
obtained by seeding the jet carrier of the point once or twice more, so the
matrices stay differentiable for the constraint engine.

Conventions.  The matrix of ``a ^ b`` is ``a b^T - b a^T`` and the
contraction ``i_X Omega`` has components ``X^mu Omega[mu, nu]``, so the
equation rows are ``Omega^T``.

* Lagrangian chart ``(t, q, v)``: ``Theta = p dq - E dt`` with ``p = dL/dv``
  and ``E = p v - L``; ``Omega = -dTheta = -dp ^ dq + dE ^ dt``.
* Skinner-Rusk chart ``(t, q, p_t, p, v)``: ``H = p_t + p v - L``,
  ``omega_Q = dp_t ^ dt + dp ^ dq``, ``Omega_H = omega_Q - dH ^ dt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expr as E
from .jet import Jet, as_jet, mul_data, seed
from .system import Chart, velocity_name


@dataclass(eq=True)
class LagrangianSpec:
    chart: Chart  # time + q names + v names
    q_names: tuple[str, ...]
    L: E.Expr

    @property
    def v_names(self) -> tuple[str, ...]:
        return tuple(velocity_name(q) for q in self.q_names)


@dataclass(eq=True)
class SkinnerRuskSpec(LagrangianSpec):
    pass


def momentum_name(name: str) -> str:
    return f"p_{name}"


def _wedge(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    """Raw jet data of ``a b^T - b a^T`` for jet vectors of shape ``(N, *batch, W)``."""
    return mul_data(a[:, None], b[None, :], k) - mul_data(b[:, None], a[None, :], k)


def _unit(N: int, i: int, like: np.ndarray) -> np.ndarray:
    out = np.zeros((N,) + like.shape[1:])
    out[i, ..., 0] = 1.0
    return out


def _as_data(y, batch: tuple, k: int) -> np.ndarray:
    y = as_jet(y, k)
    if y.k < k:
        y = y.promote(k)
    return np.broadcast_to(y.data, batch + (1 << k,))


class _Frontend:
    """Common protocol: ``names``, ``dim``, ``time_index``, ``matrices``."""

    chart: Chart
    time_state: str

    @property
    def names(self) -> tuple[str, ...]:
        return self.chart.state_names

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def time_index(self) -> int:
        return 0

    @property
    def time_dependent(self) -> bool:
        return False

    def matrices_float(self, x) -> tuple[np.ndarray, np.ndarray]:
        A, b = self.matrices(Jet.constant(np.asarray(x, dtype=float)))
        return np.array(A.primal), np.array(b.primal)


class LagrangianSystem(_Frontend):
    """Rows ``Omega_L^T`` (2n+1), ``tdot = 1``, and ``qdot - v tdot = 0`` (n)."""

    def __init__(self, spec: LagrangianSpec):
        self.spec = spec
        self.n = len(spec.q_names)
        tname = spec.chart.time_name or "t"
        self.chart = Chart(None, (tname,) + spec.chart.state_names, spec.chart.parameters,
                           spec.chart.time_functions)
        self.time_state = tname
        self.L = E.remap(spec.L, self.chart.state_names)
        self.nrows = 3 * self.n + 2

    @cached_property
    def _Lfn(self):
        return E.compile_exprs([self.L], "jet")

    def _derivatives(self, x: Jet):
        """Gradient of L (N,) and rows d(dL/dv_i) (n, N) as jets over ``x``."""
        N, n, k = self.dim, self.n, x.k
        batch = x.shape[1:]
        base = np.broadcast_to(x.data[:, None, None], (N, N, n) + batch + (1 << k,))
        d1 = np.zeros((N, N, n) + batch)
        d2 = np.zeros((N, N, n) + batch)
        for mu in range(N):
            d1[mu, mu] = 1.0
        for i in range(n):
            d2[1 + n + i, :, i] = 1.0
        y = self._Lfn(seed(seed(Jet(base, k), Jet.constant(d1, k)), Jet.constant(d2, k + 1)))[0]
        data = _as_data(y, (N, n) + batch, k + 2)
        W = 1 << k
        grad = data[:, 0, ..., W:2 * W]
        mixed = np.moveaxis(data[..., 3 * W:], 1, 0)  # (n, N, ...)
        return grad, mixed

    def omega_data(self, x: Jet) -> np.ndarray:
        N, n, k = self.dim, self.n, x.k
        grad, H = self._derivatives(x)
        v = x.data[1 + n:]
        p = grad[1 + n:]
        dE = mul_data(v[:, None], H, k).sum(axis=0) - grad
        dE[1 + n:] += p
        like = grad
        t_hat = _unit(N, 0, like)
        Om = _wedge(dE, t_hat, k)
        for i in range(n):
            Om -= _wedge(H[i], _unit(N, 1 + i, like), k)
        return Om

    def omega(self, point) -> np.ndarray:
        """Float matrix ``Omega_L[mu, nu]`` at a point of the chart."""
        return np.array(self.omega_data(Jet.constant(np.asarray(point, dtype=float)))[..., 0])

    def matrices(self, x: Jet) -> tuple[Jet, Jet]:
        N, n, k = self.dim, self.n, x.k
        Om = self.omega_data(x)
        batch = x.shape[1:]
        W = 1 << k
        A = np.zeros((self.nrows, N) + batch + (W,))
        A[:N] = np.swapaxes(Om, 0, 1)
        A[N, 0, ..., 0] = 1.0
        for i in range(n):
            A[N + 1 + i, 1 + i, ..., 0] = 1.0
            A[N + 1 + i, 0] = -x.data[1 + n + i]
        b = np.zeros((self.nrows,) + batch + (W,))
        b[N, ..., 0] = 1.0
        return Jet(A, k), Jet(b, k)


class SkinnerRuskSystem(_Frontend):
    """Rows ``Omega_H^T`` (3n+2) and ``tdot = 1`` on ``(t, q, p_t, p, v)``."""

    def __init__(self, spec: SkinnerRuskSpec):
        self.spec = spec
        n = self.n = len(spec.q_names)
        tname = spec.chart.time_name or "t"
        qs = spec.q_names
        names = ((tname,) + qs + (momentum_name(tname),) + tuple(momentum_name(q) for q in qs)
                 + spec.v_names)
        self.chart = Chart(None, names, spec.chart.parameters, spec.chart.time_functions)
        self.time_state = tname
        self.L = E.remap(spec.L, names)
        self.nrows = 3 * n + 3

    @property
    def p_slice(self) -> slice:
        return slice(self.n + 2, 2 * self.n + 2)

    @property
    def v_slice(self) -> slice:
        return slice(2 * self.n + 2, 3 * self.n + 2)

    @cached_property
    def _Lfn(self):
        return E.compile_exprs([self.L], "jet")

    def omega_data(self, x: Jet) -> np.ndarray:
        N, n, k = self.dim, self.n, x.k
        batch = x.shape[1:]
        W = 1 << k
        dirs = np.zeros((N, N) + batch)
        for mu in range(N):
            dirs[mu, mu] = 1.0
        base = np.broadcast_to(x.data[:, None], (N, N) + batch + (W,))
        y = self._Lfn(seed(Jet(base, k), Jet.constant(dirs, k)))[0]
        dL = _as_data(y, (N,) + batch, k + 1)[..., W:]
        p = x.data[self.p_slice]
        v = x.data[self.v_slice]
        # dH without the dp_t term, which cancels against omega_Q
        dH = -dL.copy()
        dH[self.p_slice] += v
        dH[self.v_slice] += p
        like = dH
        t_hat = _unit(N, 0, like)
        Om = -_wedge(dH, t_hat, k)
        for i in range(n):
            Om += _wedge(_unit(N, n + 2 + i, like), _unit(N, 1 + i, like), k)
        return Om

    def omega(self, point) -> np.ndarray:
        return np.array(self.omega_data(Jet.constant(np.asarray(point, dtype=float)))[..., 0])

    def matrices(self, x: Jet) -> tuple[Jet, Jet]:
        N, k = self.dim, x.k
        batch = x.shape[1:]
        W = 1 << k
        A = np.zeros((self.nrows, N) + batch + (W,))
        A[:N] = np.swapaxes(self.omega_data(x), 0, 1)
        A[N, 0, ..., 0] = 1.0
        b = np.zeros((self.nrows,) + batch + (W,))
        b[N, ..., 0] = 1.0
        return Jet(A, k), Jet(b, k)


def lagrangian_system(spec: LagrangianSpec) -> LagrangianSystem:
    return LagrangianSystem(spec)


def skinner_rusk_system(spec: SkinnerRuskSpec) -> SkinnerRuskSystem:
    return SkinnerRuskSystem(spec)
