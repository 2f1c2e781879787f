"""Independent reference solvers used only by the tests."""

import itertools

import numpy as np


def active_set_oracle(H, y, C):
    """Exact optimum of ``max 1'a - a'Ha/2, 0 <= a <= C, y'a = 0`` for tiny m.

    Every coordinate is fixed at 0, fixed at C, or free; for each pattern the
    stationarity system on the free set (with the equality multiplier) is
    solved and feasible candidates are compared. A concave QP attains its
    maximum at a stationary point of some face, so the best candidate is optimal.
    """
    m = len(y)
    best = -np.inf
    best_a = None
    for pattern in itertools.product((0, 1, 2), repeat=m):
        pattern = np.array(pattern)
        a = np.where(pattern == 1, C, 0.0).astype(float)
        free = np.flatnonzero(pattern == 2)
        if free.size:
            fixed = pattern != 2
            k = free.size
            A = np.zeros((k + 1, k + 1))
            A[:k, :k] = H[np.ix_(free, free)]
            A[:k, k] = y[free]
            A[k, :k] = y[free]
            rhs = np.concatenate([1.0 - H[np.ix_(free, np.flatnonzero(fixed))] @ a[fixed], [-(y[fixed] @ a[fixed])]])
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if np.linalg.norm(A @ sol - rhs) > 1e-8 * max(1.0, np.linalg.norm(rhs)):
                continue
            a[free] = sol[:k]
        if np.any(a < -1e-10) or np.any(a > C + 1e-10) or abs(y @ a) > 1e-9:
            continue
        a = np.clip(a, 0.0, C)
        val = a.sum() - 0.5 * a @ H @ a
        if val > best:
            best, best_a = val, a
    return best, best_a


def mu_grid_oracle(y, G1, G2, C, step=0.01):
    """Minimize the SVM optimal value over ``mu K1 + (1 - mu) K2`` on a grid."""
    import cvxpy as cp

    Y = np.outer(y, y)
    best = (np.inf, None)
    m = len(y)
    for mu in np.round(np.arange(0.0, 1.0 + 1e-9, step), 10):
        K = mu * G1 + (1 - mu) * G2
        H = 0.5 * (K * Y + (K * Y).T)
        L = np.linalg.cholesky(H + 1e-12 * np.eye(m))
        a = cp.Variable(m)
        prob = cp.Problem(cp.Maximize(cp.sum(a) - 0.5 * cp.sum_squares(L.T @ a)), [a >= 0, a <= C, y @ a == 0])
        prob.solve(solver=cp.CLARABEL)
        if prob.value < best[0]:
            best = (prob.value, mu)
    return best
