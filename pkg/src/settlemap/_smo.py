"""Sequential minimal optimization for the soft-margin SVM dual.

Works on a precomputed kernel matrix.  Pair selection follows the
maximal-violating-pair rule with a second-order choice of the second
index; the stopping criterion is the KKT violation gap.  The solver is
JIT-compiled because it sits inside a 280-point hyperparameter grid
search repeated for every ensemble member, and it supports warm starts
so the ascending-C sweep of the grid search can reuse the previous
solution (the feasible box only grows with C).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def solve_inplace(K, y, C, tol, max_iter, alpha, grad):  # pragma: no cover
    """Maximize the SVM dual, updating ``alpha`` and ``grad`` in place.

    ``grad`` is the gradient of 0.5*a'Qa - sum(a) with Q = yy'K and must
    be consistent with ``alpha`` on entry (use zeros and -1s for a cold
    start).  Returns (bias, iterations, kkt_gap); convergence means
    kkt_gap < tol.
    """
    n = K.shape[0]
    gap = np.inf
    iterations = 0
    snap = 1e-12 if C < 1e3 else C * 1e-15

    while iterations < max_iter:
        # first index: largest violation among pixels allowed to grow
        i = -1
        g_max = -np.inf
        for t in range(n):
            if (y[t] > 0.0 and alpha[t] < C) or (y[t] < 0.0 and alpha[t] > 0.0):
                v = -y[t] * grad[t]
                if v > g_max:
                    g_max = v
                    i = t
        # second index: most negative second-order objective decrease
        g_min = np.inf
        j = -1
        obj_min = np.inf
        if i >= 0:
            k_ii = K[i, i]
            for t in range(n):
                if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                    v = -y[t] * grad[t]
                    if v < g_min:
                        g_min = v
                    diff = g_max - v
                    if diff > 0.0:
                        quad = k_ii + K[t, t] - 2.0 * K[i, t]
                        if quad < 1e-12:
                            quad = 1e-12
                        ob = -(diff * diff) / quad
                        if ob < obj_min:
                            obj_min = ob
                            j = t
        gap = g_max - g_min
        if gap < tol or j < 0:
            break

        s = y[i] * y[j]
        e_i = y[i] * grad[i]  # = u_i - y_i
        e_j = y[j] * grad[j]
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < 1e-12:
            eta = 1e-12
        a_i_old = alpha[i]
        a_j_old = alpha[j]
        a_j = a_j_old + y[j] * (e_i - e_j) / eta
        if s < 0.0:
            lo = max(0.0, a_j_old - a_i_old)
            hi = min(C, C + a_j_old - a_i_old)
        else:
            lo = max(0.0, a_i_old + a_j_old - C)
            hi = min(C, a_i_old + a_j_old)
        if a_j < lo:
            a_j = lo
        elif a_j > hi:
            a_j = hi
        a_i = a_i_old + s * (a_j_old - a_j)
        # snap to the exact bounds so cancellation dust cannot freeze a pair
        if a_i < snap:
            a_i = 0.0
        elif a_i > C - snap:
            a_i = C
        if a_j < snap:
            a_j = 0.0
        elif a_j > C - snap:
            a_j = C
        d_i = a_i - a_i_old
        d_j = a_j - a_j_old
        if d_i == 0.0 and d_j == 0.0:
            break  # numerically stuck pair; report the remaining gap
        alpha[i] = a_i
        alpha[j] = a_j
        yi_di = y[i] * d_i
        yj_dj = y[j] * d_j
        for t in range(n):
            grad[t] += y[t] * (yi_di * K[i, t] + yj_dj * K[j, t])
        iterations += 1

    # bias from free vectors, else midpoint of the feasible interval
    n_free = 0
    b_sum = 0.0
    for t in range(n):
        if 0.0 < alpha[t] < C:
            n_free += 1
            b_sum += -y[t] * grad[t]
    if n_free > 0:
        bias = b_sum / n_free
    else:
        g_max = -np.inf
        g_min = np.inf
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0.0 and alpha[t] < C) or (y[t] < 0.0 and alpha[t] > 0.0):
                if v > g_max:
                    g_max = v
            if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                if v < g_min:
                    g_min = v
        bias = (g_max + g_min) / 2.0
    return bias, iterations, gap


def solve(K, y, C, tol, max_iter):
    """Cold-start convenience wrapper; returns (alpha, bias, iterations, gap)."""
    alpha = np.zeros(len(y))
    grad = np.full(len(y), -1.0)
    bias, iterations, gap = solve_inplace(K, y, C, tol, max_iter, alpha, grad)
    return alpha, bias, iterations, gap
