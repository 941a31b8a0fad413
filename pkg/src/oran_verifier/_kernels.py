"""Compiled sparse loops used by the exact engines.

All matrices arrive as raw CSR arrays (indptr, indices, data).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gauss_seidel_stationary(indptr, indices, data, exit_rates, pi, tol, max_iter):
    """Solve pi Q = 0, sum(pi) = 1 in place.

    ``indptr/indices/data`` is the CSR form of the transposed off-diagonal
    rate matrix, so row ``j`` lists the rates *into* state ``j``. Iterates
    until the largest relative change of a sweep falls below ``tol``.
    Returns (iterations, last relative change).
    """
    n = len(pi)
    old = np.empty(n)
    change = np.inf
    it = 0
    while it < max_iter:
        it += 1
        for j in range(n):
            old[j] = pi[j]
        for j in range(n):
            acc = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                acc += pi[indices[k]] * data[k]
            pi[j] = acc / exit_rates[j]
        total = 0.0
        for j in range(n):
            total += pi[j]
        change = 0.0
        for j in range(n):
            pi[j] /= total
            if pi[j] > 0.0:
                d = abs(pi[j] - old[j]) / pi[j]
                if d > change:
                    change = d
        if change < tol:
            break
    return it, change


@njit(cache=True)
def gauss_seidel_reach(indptr, indices, data, exit_rates, x, solve_mask, tol, max_iter):
    """Fixed point x = P_emb x on ``solve_mask`` states (others are held fixed).

    Returns (iterations, last absolute change).
    """
    n = len(x)
    change = np.inf
    it = 0
    while it < max_iter:
        it += 1
        change = 0.0
        for i in range(n):
            if not solve_mask[i]:
                continue
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            new = acc / exit_rates[i]
            d = abs(new - x[i])
            if d > change:
                change = d
            x[i] = new
        if change < tol:
            break
    return it, change


@njit(cache=True)
def uniformized_step(indptr, indices, data, inv_q, diag, v, absorbing, out):
    """out = P v for every column of ``v``, with P = I + Q/q.

    ``data`` holds the rates R and ``inv_q`` is 1/q; ``diag`` holds
    1 - exit/q. Rows flagged in
    ``absorbing[:, c]`` keep value 1 in column ``c``.
    """
    n, m = v.shape
    acc = np.empty(m)
    for i in range(n):
        d = diag[i]
        for c in range(m):
            acc[c] = d * v[i, c]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            w = data[k] * inv_q
            for c in range(m):
                acc[c] += w * v[j, c]
        for c in range(m):
            out[i, c] = 1.0 if absorbing[i, c] else acc[c]
