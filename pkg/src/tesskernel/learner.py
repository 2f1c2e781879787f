"""Kernel learning over tessellated kernels.

Two routes:

* ``learn_saddle`` maximizes ``phi(a) = sum(a) - (c/2) lambda_max(M(a))`` over
  the SVM dual feasible set. For a fixed ``a`` the dual objective is linear in
  ``P``, ``a'YKYa = trace(P M(a))``, so its minimum over
  ``{P >= 0, trace P = c}`` is attained at ``c v v'`` with ``v`` the top
  eigenvector of ``M(a)``.
* ``learn_mkl`` learns simplex weights over a fixed list of kernel matrices
  by reduced-gradient descent on the optimal SVM dual value.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .kernel import (
    BlockPMatrix,
    Box,
    MonomialBasis,
    RegionMoments,
    TessellatedKernel,
    _qform_gram,
    enumerate_basis,
    from_P,
    moments_for_gammas,
)
from .qp import ConvergenceWarning, DualSolution, QPConfig, project_box_hyperplane, solve_svm_dual

log = logging.getLogger(__name__)


@dataclass
class LearnerConfig:
    degree: int = 1
    C: float = 1.0
    trace_bound: Optional[float] = None  # None -> 2 * |basis|
    max_outer_iter: int = 400
    step0: Optional[float] = None  # None -> 1 / (c * ||T||_est)
    tol: float = 1e-4
    check_every: int = 25
    average_last: int = 1
    qp_tol: float = 1e-6
    qp_max_iter: int = 50_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.trace_bound is not None and not self.trace_bound > 0:
            raise ValueError("trace_bound must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.average_last < 1:
            raise ValueError("average_last must be >= 1")

    def qp_config(self, C: Optional[float] = None) -> QPConfig:
        return QPConfig(C=self.C if C is None else C, kkt_tol=self.qp_tol, max_iter=self.qp_max_iter)


@dataclass
class MomentTensorCache:
    """Region moments for every training pair, stored per distinct z-exponent.

    ``upper[g, i, j]`` is the moment over ``z >= max(x_i, x_j)``;
    ``above[i, g]`` over ``z >= x_i``; ``whole[g]`` over the full box.
    """

    basis: MonomialBasis
    box: Box
    points: np.ndarray
    monomials: np.ndarray
    upper: np.ndarray
    above: np.ndarray
    whole: np.ndarray

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def entry(self, i: int, j: int) -> RegionMoments:
        _, index = self.basis.gamma_table
        return RegionMoments(
            self.upper[:, i, j][index],
            self.above[i][index],
            self.above[j][index],
            self.whole[index],
        )

    def gram(self, K: TessellatedKernel) -> np.ndarray:
        """Unsigned kernel matrix of ``K`` on the cached points."""
        V = self.monomials
        G = _qform_gram(K, V, V, self.upper, self.above, self.above, self.whole)
        return 0.5 * (G + G.T)


def precompute_moments(points, basis: MonomialBasis, box: Box) -> MomentTensorCache:
    X = box.check(points)
    gammas, _ = basis.gamma_table
    upper = moments_for_gammas(box, np.maximum(X[:, None, :], X[None, :, :]), gammas)
    return MomentTensorCache(
        basis=basis,
        box=box,
        points=X,
        monomials=basis.x_monomials(X),
        upper=np.ascontiguousarray(np.moveaxis(upper, -1, 0)),
        above=moments_for_gammas(box, X, gammas),
        whole=moments_for_gammas(box, box.lower, gammas),
    )


def assemble_M(alpha, y, cache: MomentTensorCache, basis: Optional[MonomialBasis] = None, C: Optional[float] = None) -> np.ndarray:
    """``M(a) = sum_ij a_i a_j y_i y_j T(x_i, x_j)``, so that
    ``trace(P M(a)) = sum_ij a_i a_j y_i y_j k_P(x_i, x_j)``.

    The blocks of ``T`` are the X11, X12, X21, X22 moment matrices. The three
    blocks involving the ``z >= x`` terms factor into outer products, so only
    the ``z >= max(x_i, x_j)`` part needs the full pair tensor.
    """
    basis = basis or cache.basis
    alpha = np.asarray(alpha, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if alpha.size != cache.m or y.size != cache.m:
        raise ValueError("alpha/labels do not match the cached points")
    if np.any(alpha < -1e-12) or (C is not None and np.any(alpha > C * (1 + 1e-12))):
        raise ValueError("alpha outside the box constraints")
    if abs(float(alpha @ y)) > 1e-8 * max(1.0, float(np.abs(alpha).sum())):
        raise ValueError("alpha violates sum(alpha * y) = 0")
    gammas, index = basis.gamma_table
    q = len(basis)
    A = (alpha * y)[:, None] * cache.monomials  # (m, q)
    s = A.sum(axis=0)  # (q,)
    U = np.einsum("ik,gil->gkl", A, cache.upper @ A)  # (G, q, q)
    u = np.einsum("ig,ik->gk", cache.above, A)  # (G, q)
    rows, cols = np.indices((q, q))
    U = U[index, rows, cols]
    ux = u[index, rows]  # u_g[k] with g = gamma(k, l)
    uy = u[index, cols]
    w = cache.whole[index]
    ss = np.outer(s, s)
    M11 = U
    M12 = ux * s[None, :] - U
    M21 = s[:, None] * uy - U
    M22 = w * ss - ux * s[None, :] - s[:, None] * uy + U
    M = np.block([[M11, M12], [M21, M22]])
    return 0.5 * (M + M.T)


def top_eig(M) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a symmetric matrix and a unit eigenvector."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("matrix must be symmetric")
    n = M.shape[0]
    w, V = scipy.linalg.eigh(M, subset_by_index=[n - 1, n - 1])
    v = V[:, 0]
    # fix the sign so results are reproducible
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return float(w[0]), v / np.linalg.norm(v)


def phi_value(alpha, y, cache: MomentTensorCache, c: float) -> float:
    lam, _ = top_eig(assemble_M(alpha, y, cache))
    return float(np.sum(alpha) - 0.5 * c * lam)


@dataclass
class SaddleState:
    alpha: np.ndarray
    best_alpha: np.ndarray
    best_value: float
    top_eigvec: np.ndarray
    iteration: int = 0


@dataclass
class SaddleResult:
    kernel: TessellatedKernel
    solution: DualSolution
    phi_trace: list
    state: SaddleState
    converged: bool
    gap: float
    trace_bound: float


def _rank_one_kernel(v, c, basis, box) -> TessellatedKernel:
    return from_P(BlockPMatrix(c * np.outer(v, v)), basis, box)


def learn_saddle(X, y, config: Optional[LearnerConfig] = None, box: Optional[Box] = None, cache: Optional[MomentTensorCache] = None) -> SaddleResult:
    """Projected supergradient ascent on ``phi`` followed by an SVM re-solve.

    The supergradient at ``a`` is ``1 - c Y K_v Y a`` with ``K_v`` the kernel
    matrix of ``P = v v'``. Every ``check_every`` iterations the SVM dual is
    solved for the current candidate kernel; its value upper-bounds the
    saddle value, so ``dual - phi_best`` is a certified gap.
    """
    config = config or LearnerConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training points")
    if np.unique(y).size < 2:
        raise ValueError("learn_saddle needs both classes present")
    basis = cache.basis if cache is not None else enumerate_basis(X.shape[1], config.degree)
    box = box or (cache.box if cache is not None else Box.unit(X.shape[1]))
    cache = cache or precompute_moments(X, basis, box)
    c = config.trace_bound if config.trace_bound is not None else 2.0 * len(basis)
    C = config.C
    qp = config.qp_config()

    alpha = np.zeros(y.size)
    best_alpha = alpha.copy()
    best_value = -np.inf
    best_v = None
    phi_trace = []
    candidates: list[np.ndarray] = []
    step0 = config.step0
    gap = np.inf
    converged = False
    last_solution = None
    it = 0
    for it in range(1, config.max_outer_iter + 1):
        M = assemble_M(alpha, y, cache)
        lam, v = top_eig(M)
        value = float(alpha.sum() - 0.5 * c * lam)
        phi_trace.append(value)
        Kv = cache.gram(_rank_one_kernel(v, 1.0, basis, box))
        if value > best_value:
            best_value, best_alpha, best_v = value, alpha.copy(), v
            candidates.append(v)
            del candidates[: -config.average_last]
        if step0 is None:
            # 1 / (c ||T||_est) with ||T|| estimated by the spectral norm of K_v
            norm_est = float(scipy.linalg.eigvalsh(Kv, subset_by_index=[y.size - 1, y.size - 1])[0])
            step0 = 1.0 / (c * max(norm_est, 1e-12))
        grad = 1.0 - c * y * (Kv @ (alpha * y))
        if it % config.check_every == 0 or it == config.max_outer_iter:
            kern = _candidate_kernel(candidates, c, basis, box)
            last_solution = solve_svm_dual(cache.gram(kern) * np.outer(y, y), y, qp, alpha0=best_alpha)
            # the SVM solution for the candidate kernel is a feasible point; jump there if phi improves
            restart_value = phi_value(last_solution.alpha, y, cache, c)
            if restart_value > best_value:
                lam_r, v_r = top_eig(assemble_M(last_solution.alpha, y, cache))
                best_value, best_alpha, best_v = restart_value, last_solution.alpha.copy(), v_r
                candidates.append(v_r)
                del candidates[: -config.average_last]
                alpha = last_solution.alpha.copy()
                phi_trace.append(restart_value)
                gap = last_solution.objective - best_value
                log.debug("saddle it=%d restart phi=%.6g", it, restart_value)
                if gap <= config.tol * max(1.0, abs(best_value)):
                    converged = True
                    break
                continue
            gap = last_solution.objective - best_value
            log.debug("saddle it=%d phi_best=%.6g dual=%.6g gap=%.3g", it, best_value, last_solution.objective, gap)
            if gap <= config.tol * max(1.0, abs(best_value)):
                converged = True
                break
        alpha = project_box_hyperplane(alpha + step0 / math.sqrt(it) * grad, C, y)

    kernel = _candidate_kernel(candidates, c, basis, box)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        solution = solve_svm_dual(cache.gram(kernel) * np.outer(y, y), y, qp, alpha0=best_alpha)
    gap = solution.objective - best_value
    if not converged:
        log.info("saddle learner stopped after %d iterations with gap %.3g", it, gap)
    state = SaddleState(alpha, best_alpha, best_value, best_v, it)
    return SaddleResult(kernel, solution, phi_trace, state, converged, gap, c)


def _candidate_kernel(candidates, c, basis, box) -> TessellatedKernel:
    P = sum(np.outer(v, v) for v in candidates) * (c / len(candidates))
    return from_P(BlockPMatrix(P), basis, box)


@dataclass
class RandomPsdBasis:
    seed: int
    trace_bound: float
    matrices: list


def generate_random_psd_basis(q_half: int, R: int, c: float, seed: int) -> RandomPsdBasis:
    """``R`` matrices ``B B'`` with standard normal ``B`` (2q x 2q), trace scaled to ``c``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    rng = np.random.default_rng(seed)
    size = 2 * q_half
    mats = []
    for _ in range(R):
        B = rng.standard_normal((size, size))
        P = B @ B.T
        P = 0.5 * (P + P.T) * (c / np.trace(P))
        mats.append(BlockPMatrix(P))
    return RandomPsdBasis(seed, c, mats)


@dataclass
class MKLWeights:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        if np.any(mu < -1e-12) or abs(mu.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the probability simplex")
        self.mu = mu


@dataclass
class MKLResult:
    weights: MKLWeights
    solution: DualSolution
    objective_trace: list
    converged: bool
    gap: float


def _mix(grams, mu):
    K = np.zeros_like(grams[0])
    for w, G in zip(mu, grams):
        if w != 0.0:
            K += w * G
    return K


def _check_psd(G, r, tol=1e-8):
    G = np.asarray(G, dtype=float)
    if not np.allclose(G, G.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(G).max(initial=0.0)))):
        raise ValueError(f"kernel matrix {r} is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))
    if lam[0] < -tol * max(1.0, abs(float(np.trace(G)))):
        raise ValueError(f"kernel matrix {r} is not PSD (min eigenvalue {lam[0]:.3e})")


def learn_mkl(
    y,
    kernel_grams: Sequence[np.ndarray],
    C: float,
    max_iter: int = 200,
    tol: float = 1e-4,
    qp_tol: float = 1e-6,
    mu0=None,
    check_psd: bool = True,
) -> MKLResult:
    """Simplex weights ``mu`` minimizing ``J(mu)``, the SVM dual optimum for ``sum mu_r K_r``.

    ``dJ/dmu_r = -0.5 (a*y)' K_r (a*y)`` at the optimal ``a``. Each iteration
    moves along the reduced gradient (pivot: the largest weight), with a
    golden-section search on the convex function ``J`` over the feasible
    segment; a step is kept only if ``J`` decreases.
    """
    y = np.asarray(y, dtype=float).ravel()
    grams = [np.asarray(G, dtype=float) for G in kernel_grams]
    R = len(grams)
    if R == 0:
        raise ValueError("need at least one kernel")
    if check_psd:
        for r, G in enumerate(grams):
            _check_psd(G, r)
    Y = np.outer(y, y)
    qp = QPConfig(C=C, kkt_tol=qp_tol)
    mu = np.full(R, 1.0 / R) if mu0 is None else np.asarray(mu0, dtype=float)

    def solve(weights, alpha0=None):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return solve_svm_dual(_mix(grams, weights) * Y, y, qp, alpha0=alpha0)

    sol = solve(mu)
    trace = [sol.objective]
    converged = False
    gap = np.inf
    for _ in range(max_iter):
        ay = sol.alpha * y
        grad = np.array([-0.5 * ay @ G @ ay for G in grams])
        gap = float(np.max(-grad) - mu @ (-grad))
        if gap <= tol * max(1.0, abs(sol.objective)):
            converged = True
            break
        u = int(np.argmax(mu))
        red = grad - grad[u]
        D = -red
        D[(mu <= 0) & (red > 0)] = 0.0
        D[u] = -(D.sum() - D[u])
        neg = D < 0
        if not neg.any():
            break
        step_max = float(np.min(-mu[neg] / D[neg]))
        best_mu, best_sol = _golden_search(lambda s: _clip_simplex(mu + s * D), solve, step_max, sol)
        if best_sol.objective >= sol.objective:
            break
        mu, sol = best_mu, best_sol
        trace.append(sol.objective)
    return MKLResult(MKLWeights(mu), sol, trace, converged, gap)


def _clip_simplex(mu):
    mu = np.maximum(mu, 0.0)
    mu[mu < 1e-14] = 0.0
    return mu / mu.sum()


def _golden_search(point, solve, step_max, current, iters: int = 12):
    """Minimize ``J(point(s))`` over ``s in [0, step_max]``."""
    phi = (math.sqrt(5) - 1) / 2
    a, b = 0.0, step_max
    cache = {}

    def J(s):
        if s not in cache:
            mu = point(s)
            cache[s] = (mu, solve(mu, current.alpha))
        return cache[s][1].objective

    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = J(x1), J(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = J(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = J(x2)
    J(step_max)
    s_best = min(cache, key=lambda s: cache[s][1].objective)
    return cache[s_best]


@dataclass
class CVResult:
    best_C: float
    mean_scores: dict
    fold_scores: dict
    flagged_folds: list


def cross_validate(
    X,
    y,
    C_grid: Sequence[float],
    fit_score: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float], float],
    folds: int = 5,
    seed: int = 0,
) -> CVResult:
    """Stratified k-fold search over ``C``; ties go to the smaller ``C``.

    ``fit_score(X_tr, y_tr, X_val, y_val, C)`` trains and returns validation
    accuracy. A fold whose training part has a single class is flagged and
    left out of the mean.
    """
    from .data import kfold

    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).ravel()
    fold_id = kfold(y, folds, seed)
    grid = sorted(float(c) for c in C_grid)
    fold_scores = {C: [] for C in grid}
    flagged = []
    for f in range(folds):
        tr, va = fold_id != f, fold_id == f
        if np.unique(y[tr]).size < 2:
            flagged.append(f)
            continue
        for C in grid:
            fold_scores[C].append(float(fit_score(X[tr], y[tr], X[va], y[va], C)))
    means = {C: (float(np.mean(s)) if s else float("nan")) for C, s in fold_scores.items()}
    best_C = grid[0]
    for C in grid:
        if means[C] > means[best_C]:
            best_C = C
    return CVResult(best_C, means, fold_scores, flagged)
