"""Truncated multilinear jets: nested forward-mode derivatives on numpy arrays.

A jet with ``k`` tags carries ``2**k`` coefficients per entry, one for every
subset of the tags ``eps_0 .. eps_{k-1}`` (with ``eps_i**2 == 0``).  Subset
``S`` lives at index ``sum(1 << i for i in S)`` of the trailing axis, so a
jet with ``k`` tags embeds into one with more tags by zero padding.

Tags are allocated in stack order: :func:`seed` introduces tag ``k`` on top
of the tags already present in its inputs and :func:`tangent` strips it
again.  Nested directional derivatives (the derivative of a function that
itself differentiates) are therefore exact, and every leading axis of a jet
is an ordinary numpy axis that broadcasts.

All batch members of a jet are assumed to share their primal value; code that
branches on values (pivoting) reads the primal of the first batch member.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ._kernels import mul_rows
from .errors import DomainError, NonFinite

__all__ = ["Jet", "seed", "tangent", "stack", "sin", "cos", "tan", "exp", "log", "sqrt", "power"]


@lru_cache(maxsize=None)
def _product_table(k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = 1 << k
    left, right, target = [], [], []
    for s in range(width):
        t = s
        while True:
            left.append(t)
            right.append(s ^ t)
            target.append(s)
            if t == 0:
                break
            t = (t - 1) & s
    scatter = np.zeros((len(target), width))
    scatter[np.arange(len(target)), target] = 1.0
    return np.array(left), np.array(right), scatter


@lru_cache(maxsize=None)
def subset_pairs(k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index triples ``(left, right, target)`` of the jet product table."""
    left, right, scatter = _product_table(k)
    return left.astype(np.int64), right.astype(np.int64), np.argmax(scatter, axis=1).astype(np.int64)


def mul_data(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    """Product of raw jet arrays with ``k`` tags (trailing axis ``2**k``)."""
    if k == 0:
        return a * b
    if a.shape != b.shape:
        a, b = np.broadcast_arrays(a, b)
    shape = a.shape
    W = shape[-1]
    left, right, target = subset_pairs(k)
    out = mul_rows(np.ascontiguousarray(a).reshape(-1, W), np.ascontiguousarray(b).reshape(-1, W),
                   left, right, target)
    return out.reshape(shape)


def compose_data(a: np.ndarray, k: int, coeffs: list[np.ndarray]) -> np.ndarray:
    """Apply a scalar function given its Taylor coefficients at the primal.

    ``coeffs[j]`` is ``f^(j)(a0) / j!`` for ``j = 0..k``.
    """
    out = np.zeros(np.broadcast_shapes(a.shape, coeffs[0].shape + (1 << k,)))
    out[..., 0] = coeffs[0]
    if k == 0:
        return out
    nil = a.copy()
    nil[..., 0] = 0.0
    power = nil
    for j in range(1, k + 1):
        out = out + coeffs[j][..., None] * power
        if j < k:
            power = mul_data(power, nil, k)
    return out


def _pad(data: np.ndarray, k_from: int, k_to: int) -> np.ndarray:
    if k_from == k_to:
        return data
    out = np.zeros(data.shape[:-1] + (1 << k_to,))
    out[..., : 1 << k_from] = data
    return out


class Jet:
    """Array of truncated jets; ``data.shape == shape + (2**k,)``."""

    __slots__ = ("data", "k")
    __array_priority__ = 100

    def __init__(self, data, k: int = 0):
        self.data = data if type(data) is np.ndarray and data.dtype == np.float64 else np.asarray(data, dtype=float)
        self.k = k

    @classmethod
    def constant(cls, values, k: int = 0) -> "Jet":
        values = np.asarray(values, dtype=float)
        data = np.zeros(values.shape + (1 << k,))
        data[..., 0] = values
        return cls(data, k)

    @property
    def shape(self) -> tuple:
        return self.data.shape[:-1]

    @property
    def primal(self) -> np.ndarray:
        return self.data[..., 0]

    def promote(self, k: int) -> "Jet":
        if k < self.k:
            raise ValueError("cannot drop tags by promotion")
        return Jet(_pad(self.data, self.k, k), k)

    def __getitem__(self, idx) -> "Jet":
        return Jet(self.data[idx], self.k)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Jet(k={self.k}, shape={self.shape})"

    # arithmetic -------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.k == self.k:
                return self.data, other.data, self.k
            k = max(self.k, other.k)
            return _pad(self.data, self.k, k), _pad(other.data, other.k, k), k
        other = np.asarray(other, dtype=float)
        data = np.zeros(other.shape + (1 << self.k,))
        data[..., 0] = other
        return self.data, data, self.k

    def __add__(self, other):
        if isinstance(other, (int, float)):
            data = self.data.copy()
            data[..., 0] += other
            return Jet(data, self.k)
        a, b, k = self._coerce(other)
        return Jet(a + b, k)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            data = self.data.copy()
            data[..., 0] -= other
            return Jet(data, self.k)
        a, b, k = self._coerce(other)
        return Jet(a - b, k)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Jet(-self.data, self.k)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Jet(self.data * other, self.k)
        a, b, k = self._coerce(other)
        return Jet(mul_data(a, b, k), k)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        x0 = self.primal
        if (x0 == 0.0).any():
            raise DomainError("division by zero")
        inv = 1.0 / x0
        coeffs = [inv]
        for _ in range(self.k):
            coeffs.append(-coeffs[-1] * inv)
        return Jet(compose_data(self.data, self.k, coeffs), self.k)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                raise DomainError("division by zero")
            return Jet(self.data / other, self.k)
        if not isinstance(other, Jet):
            other = Jet.constant(other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, exponent):
        return power(self, exponent)


def as_jet(x, k: int = 0) -> Jet:
    return x if isinstance(x, Jet) else Jet.constant(x, k)


def seed(x, direction) -> Jet:
    """Return ``x + eps * direction`` with ``eps`` a fresh tag on top."""
    x = as_jet(x)
    direction = as_jet(direction)
    k = max(x.k, direction.k)
    lo = _pad(x.data, x.k, k)
    hi = _pad(direction.data, direction.k, k)
    lo, hi = np.broadcast_arrays(lo, hi)
    return Jet(np.concatenate([lo, hi], axis=-1), k + 1)


def tangent(y, k: int) -> Jet:
    """Coefficient of the tag ``k`` introduced by :func:`seed` (drops it)."""
    if not isinstance(y, Jet):
        return Jet.constant(np.zeros(np.shape(y)), k)
    if y.k <= k:
        return Jet(np.zeros(y.data.shape[:-1] + (1 << k,)), k)
    if y.k != k + 1:
        raise ValueError("tangent() must strip the most recent tag")
    return Jet(y.data[..., 1 << k :], k)


def strip(y, k: int) -> Jet:
    """Part of ``y`` free of tag ``k`` (the value along a seeded line)."""
    if not isinstance(y, Jet):
        return Jet.constant(y, k)
    if y.k <= k:
        return y.promote(k)
    return Jet(y.data[..., : 1 << k], k)


def stack(items, axis: int = 0) -> Jet:
    """Stack jets and plain numbers into one jet array."""
    k = max((it.k for it in items if isinstance(it, Jet)), default=0)
    shape = np.broadcast_shapes(*(it.shape if isinstance(it, Jet) else np.shape(it) for it in items))
    datas = []
    for it in items:
        if isinstance(it, Jet):
            d = _pad(it.data, it.k, k)
        else:
            d = Jet.constant(it, k).data
        datas.append(np.broadcast_to(d, shape + (1 << k,)))
    return Jet(np.stack(datas, axis=axis), k)


# elementary functions ------------------------------------------------------

def _taylor(x: Jet, derivs) -> Jet:
    coeffs = [d / math.factorial(j) for j, d in enumerate(derivs)]
    return Jet(compose_data(x.data, x.k, coeffs), x.k)


def sin(x):
    if not isinstance(x, Jet):
        return math.sin(x)
    s, c = np.sin(x.primal), np.cos(x.primal)
    cycle = [s, c, -s, -c]
    return _taylor(x, [cycle[j % 4] for j in range(x.k + 1)])


def cos(x):
    if not isinstance(x, Jet):
        return math.cos(x)
    s, c = np.sin(x.primal), np.cos(x.primal)
    cycle = [c, -s, -c, s]
    return _taylor(x, [cycle[j % 4] for j in range(x.k + 1)])


def tan(x):
    if not isinstance(x, Jet):
        return float(np.tan(x))
    return sin(x) / cos(x)


def exp(x):
    if not isinstance(x, Jet):
        try:
            return math.exp(x)
        except OverflowError:
            raise NonFinite(f"exp overflows at {x!r}") from None
    with np.errstate(over="ignore"):
        e = np.exp(x.primal)
    if not np.all(np.isfinite(e)):
        raise NonFinite("exp overflows")
    return _taylor(x, [e] * (x.k + 1))


def log(x):
    if not isinstance(x, Jet):
        if x <= 0.0:
            raise DomainError("log of non-positive value")
        return float(np.log(x))
    x0 = x.primal
    if np.any(x0 <= 0.0):
        raise DomainError("log of non-positive value")
    derivs = [np.log(x0)]
    for j in range(1, x.k + 1):
        derivs.append((-1.0) ** (j - 1) * math.factorial(j - 1) / x0**j)
    return _taylor(x, derivs)


def power(x, c: float):
    """``x**c`` for a constant real exponent."""
    c = float(c)
    integral = c == int(c)
    if not isinstance(x, Jet):
        if x < 0.0 and not integral:
            raise DomainError("fractional power of negative value")
        if x == 0.0 and c < 0:
            raise DomainError("negative power of zero")
        return float(np.power(x, c))
    if c == 2.0:
        return x * x
    if c == 3.0:
        return x * x * x
    x0 = x.primal
    if not integral and np.any(x0 < 0.0):
        raise DomainError("fractional power of negative value")
    if np.any(x0 == 0.0) and (c < 0 or (not integral and x.k > 0)):
        raise DomainError("power not differentiable at zero")
    derivs = []
    coef = 1.0
    for j in range(x.k + 1):
        if integral and c >= 0 and j > c:
            derivs.append(np.zeros_like(x0))
        else:
            derivs.append(coef * np.power(x0, c - j))
        coef *= c - j
    return _taylor(x, derivs)


def sqrt(x):
    if not isinstance(x, Jet):
        if x < 0.0:
            raise DomainError("sqrt of negative value")
        return math.sqrt(x)
    x0 = x.primal
    if np.any(x0 < 0.0) or (x.k > 0 and np.any(x0 == 0.0)):
        raise DomainError("sqrt outside its differentiable domain")
    root = np.sqrt(x0)
    derivs = [root]
    coef = 0.5
    for j in range(1, x.k + 1):
        derivs.append(coef * root / x0**j)
        coef *= 0.5 - j
    return _taylor(x, derivs)
