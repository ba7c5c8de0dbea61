"""Compiled inner loops for jet-valued Gauss-Jordan elimination."""

import numpy as np
from numba import njit


@njit(cache=True)
def _jet_mul(a, b, left, right, target, out):
    out[:] = 0.0
    for l in range(left.shape[0]):
        out[target[l]] += a[left[l]] * b[right[l]]


@njit(cache=True)
def _jet_reciprocal(a, out):
    W = a.shape[0]
    inv0 = 1.0 / a[0]
    out[0] = inv0
    for s in range(1, W):
        acc = 0.0
        t = s
        while t > 0:
            acc += a[t] * out[s ^ t]
            t = (t - 1) & s
        out[s] = -acc * inv0


@njit(cache=True)
def eliminate_kernel(M, n, thresh, limit, left, right, target):
    """Reduce ``M`` of shape ``(m, ncols, B, W)`` in place over its first ``n`` columns.

    Returns the pivot list as an ``(count, 2)`` integer array.
    """
    m, ncols, B, W = M.shape
    used = np.zeros(m, dtype=np.bool_)
    pivots = np.zeros((min(m, n), 2), dtype=np.int64)
    count = 0
    inv = np.empty(W)
    tmp = np.empty(W)
    row = np.empty((ncols, B, W))
    for c in range(n):
        if count >= limit:
            break
        r = -1
        best = -1.0
        for i in range(m):
            if not used[i]:
                v = abs(M[i, c, 0, 0])
                if v > best:
                    best = v
                    r = i
        if r < 0 or best <= thresh:
            continue
        unit = True
        for bb in range(B):
            if M[r, c, bb, 0] != 1.0:
                unit = False
            for w in range(1, W):
                if M[r, c, bb, w] != 0.0:
                    unit = False
        for bb in range(B):
            if unit:
                for j in range(ncols):
                    for w in range(W):
                        row[j, bb, w] = M[r, j, bb, w]
            else:
                _jet_reciprocal(M[r, c, bb], inv)
                for j in range(ncols):
                    _jet_mul(M[r, j, bb], inv, left, right, target, tmp)
                    for w in range(W):
                        row[j, bb, w] = tmp[w]
            for w in range(W):
                row[c, bb, w] = 0.0
            row[c, bb, 0] = 1.0
        for i in range(m):
            if i == r:
                continue
            nonzero = False
            for bb in range(B):
                for w in range(W):
                    if M[i, c, bb, w] != 0.0:
                        nonzero = True
            if not nonzero:
                continue
            for bb in range(B):
                f = M[i, c, bb].copy()
                for j in range(ncols):
                    _jet_mul(f, row[j, bb], left, right, target, tmp)
                    for w in range(W):
                        M[i, j, bb, w] -= tmp[w]
        for j in range(ncols):
            for bb in range(B):
                for w in range(W):
                    M[r, j, bb, w] = row[j, bb, w]
        for i in range(m):
            for bb in range(B):
                for w in range(W):
                    M[i, c, bb, w] = 0.0
        for bb in range(B):
            M[r, c, bb, 0] = 1.0
        used[r] = True
        pivots[count, 0] = r
        pivots[count, 1] = c
        count += 1
    return pivots[:count]


@njit(cache=True)
def mul_rows(a, b, left, right, target):
    """Row-wise jet product of two ``(P, W)`` arrays."""
    P, W = a.shape
    out = np.zeros((P, W))
    for p in range(P):
        for l in range(left.shape[0]):
            out[p, target[l]] += a[p, left[l]] * b[p, right[l]]
    return out


@njit(cache=True)
def solve_square(A, b):
    """Partial-pivoting solve of a small square system; returns ``(x, ok)``."""
    n = A.shape[0]
    M = A.copy()
    x = b.copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(M[i, j]))
    for c in range(n):
        p = c
        for r in range(c + 1, n):
            if abs(M[r, c]) > abs(M[p, c]):
                p = r
        if abs(M[p, c]) <= 1e-14 * scale:
            return x, False
        if p != c:
            for j in range(c, n):
                M[c, j], M[p, j] = M[p, j], M[c, j]
            x[c], x[p] = x[p], x[c]
        for r in range(c + 1, n):
            f = M[r, c] / M[c, c]
            if f != 0.0:
                for j in range(c + 1, n):
                    M[r, j] -= f * M[c, j]
                x[r] -= f * x[c]
    for c in range(n - 1, -1, -1):
        acc = x[c]
        for j in range(c + 1, n):
            acc -= M[c, j] * x[j]
        x[c] = acc / M[c, c]
    return x, True
