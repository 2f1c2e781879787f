"""Soft-margin SVM dual: box/hyperplane projection, solver, bias and prediction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .kernel import SignedGram

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class QPConfig:
    C: float = 1.0
    kkt_tol: float = 1e-6
    max_iter: int = 50_000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.kkt_tol > 0:
            raise ValueError(f"kkt_tol must be positive, got {self.kkt_tol}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @classmethod
    def from_lambda(cls, lam: float, m: int, **kw) -> "QPConfig":
        """``C = 1 / (m * lam)``."""
        return cls(C=1.0 / (m * lam), **kw)


@dataclass
class DualSolution:
    alpha: np.ndarray
    bias: float
    objective: float
    support_indices: np.ndarray
    kkt_residual: float
    iterations: int = 0
    converged: bool = True
    degenerate_bias: bool = False
    history: list = field(default_factory=list, repr=False)


def support_threshold(C: float) -> float:
    return 1e-8 * C


def project_box_hyperplane(v, C: float, y) -> np.ndarray:
    """Euclidean projection onto ``{a : 0 <= a <= C, y.a = 0}``.

    The projection is ``clip(v - theta*y, 0, C)`` for the multiplier theta that
    zeroes ``h(theta) = sum_i y_i clip(v_i - theta*y_i, 0, C)``. ``h`` is
    piecewise linear and non-increasing, so theta is found exactly by scanning
    its sorted breakpoints.
    """
    v = np.asarray(v, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if v.shape != y.shape:
        raise ValueError("v and y must have the same length")
    if C < 0:
        raise ValueError("C must be non-negative")

    if C == 0 or v.size == 0:
        return np.zeros_like(v)
    pos = y > 0
    # each term clip(v_i - theta*y_i, 0, C) bends twice: slope -1 starts, then stops
    starts = np.where(pos, v - C, -v)
    stops = np.where(pos, v, C - v)
    bps = np.concatenate([starts, stops])
    deltas = np.concatenate([-np.ones(v.size), np.ones(v.size)])
    order = np.argsort(bps, kind="stable")
    bps, deltas = bps[order], deltas[order]
    slopes = np.cumsum(deltas)  # slope of h on (bps[k], bps[k+1])
    vals = pos.sum() * C + np.concatenate([[0.0], np.cumsum(slopes[:-1] * np.diff(bps))])
    k = int(np.argmax(vals <= 0.0))
    if vals[k] == 0.0 or k == 0:
        theta = bps[k]
    else:
        theta = bps[k - 1] + vals[k - 1] / -slopes[k - 1]
    out = np.clip(v - theta * y, 0.0, C)
    return _polish_equality(out, C, y)


def _polish_equality(a: np.ndarray, C: float, y: np.ndarray) -> np.ndarray:
    """Remove round-off in ``y.a`` by shifting free coordinates of the larger side."""
    r = float(np.dot(y, a))
    if r == 0.0:
        return a
    a = a.copy()
    for _ in range(3):
        side = np.sign(r)
        idx = np.flatnonzero((y == side) & (a > 0))
        if idx.size == 0:
            break
        shift = abs(r) / idx.size
        a[idx] = np.maximum(a[idx] - shift, 0.0)
        r = float(np.dot(y, a))
        if abs(r) <= 1e-15 * max(1.0, C):
            break
    return a


def dual_objective(alpha, H) -> float:
    return float(alpha.sum() - 0.5 * alpha @ H @ alpha)


def kkt_residual(alpha, grad, C, y) -> float:
    """Infinity norm of the projected-gradient step ``alpha - P(alpha + grad)``."""
    if alpha.size == 0:
        return 0.0
    return float(np.max(np.abs(alpha - project_box_hyperplane(alpha + grad, C, y))))


def _signed_matrix(gram, y) -> np.ndarray:
    if isinstance(gram, SignedGram):
        H = gram.entries if gram.label_signed else gram.entries * np.outer(y, y)
    else:
        H = np.asarray(gram, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("Gram matrix must be square")
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("Gram matrix is not symmetric")
    return 0.5 * (H + H.T)


def solve_svm_dual(gram, y, config: Optional[QPConfig] = None, alpha0=None, track=False) -> DualSolution:
    """Maximize ``sum(a) - a'Ha/2`` over ``0 <= a <= C, y'a = 0``.

    ``gram`` is a :class:`SignedGram` (label-signed or not) or a plain array
    taken as the label-signed matrix ``H``. Projected gradient ascent with a
    Barzilai-Borwein trial step; the step along the projected direction is the
    exact maximizer of the quadratic on the feasible segment, so the objective
    never decreases.
    """
    config = config or QPConfig()
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1/-1")
    H = _signed_matrix(gram, y)
    m = y.size
    if H.shape[0] != m:
        raise ValueError(f"Gram is {H.shape[0]}x{H.shape[0]} but there are {m} labels")
    C = config.C

    alpha = np.zeros(m) if alpha0 is None else project_box_hyperplane(alpha0, C, y)
    Ha = H @ alpha
    grad = 1.0 - Ha
    diag_max = float(np.max(np.diag(H), initial=0.0))
    step = 1.0 / diag_max if diag_max > 0 else 1.0
    history = []
    converged = False
    residual = kkt_residual(alpha, grad, C, y)
    prev_free = None
    it = 0
    for it in range(1, config.max_iter + 1):
        if residual <= config.kkt_tol:
            converged = True
            it -= 1
            break
        direction = project_box_hyperplane(alpha + step * grad, C, y) - alpha
        slope = float(grad @ direction)
        if slope <= 0.0:
            # projected direction is not ascent only at a stationary point up to round-off
            converged = residual <= 10 * config.kkt_tol
            break
        Hd = H @ direction
        curv = float(direction @ Hd)
        t = 1.0 if curv <= 0.0 else min(1.0, slope / curv)
        alpha = alpha + t * direction
        np.clip(alpha, 0.0, C, out=alpha)
        Ha = Ha + t * Hd
        grad = 1.0 - Ha
        # BB step for the next trial point
        s = t * direction
        sHs = t * t * curv
        ss = float(s @ s)
        step = ss / sHs if sHs > 1e-300 else step * 4.0
        step = float(np.clip(step, 1e-12, 1e12))
        free = (alpha > support_threshold(C)) & (alpha < C - support_threshold(C))
        if prev_free is not None and np.array_equal(free, prev_free):
            step_t, face_dir = _face_step(alpha, grad, H, y, C, free)
            if step_t > 0.0:
                alpha = np.clip(alpha + step_t * face_dir, 0.0, C)
                Ha = H @ alpha
                grad = 1.0 - Ha
                free = (alpha > support_threshold(C)) & (alpha < C - support_threshold(C))
        prev_free = free
        if track:
            history.append(dual_objective(alpha, H))
        if it % 50 == 0:
            # periodic resync against drift in the running product
            Ha = H @ alpha
            grad = 1.0 - Ha
        residual = kkt_residual(alpha, grad, C, y)
    else:
        converged = residual <= config.kkt_tol

    alpha = project_box_hyperplane(alpha, C, y)
    grad = 1.0 - H @ alpha
    residual = kkt_residual(alpha, grad, C, y)
    if not converged:
        warnings.warn(
            f"SVM dual did not converge in {config.max_iter} iterations (KKT residual {residual:.2e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    sv = np.flatnonzero(alpha > support_threshold(C))
    # Bias from H: y_i * sum_j a_j y_j k_ij = (H a)_i
    bias, degenerate = _bias_from_signed(alpha, H @ alpha, y, C)
    return DualSolution(
        alpha=alpha,
        bias=bias,
        objective=dual_objective(alpha, H),
        support_indices=sv,
        kkt_residual=residual,
        iterations=it,
        converged=converged,
        degenerate_bias=degenerate,
        history=history,
    )


def _face_step(alpha, grad, H, y, C, free) -> tuple[float, np.ndarray]:
    """Newton direction on the face fixing the bound variables, with exact line search.

    The direction maximizes ``g'd - d'Hd/2`` over ``d`` supported on the free
    set with ``y'd = 0``; the step is the exact maximizer along it, cut at the
    first bound.
    """
    F = np.flatnonzero(free)
    if F.size < 2:
        return 0.0, alpha
    HF = H[np.ix_(F, F)]
    yF = y[F]
    k = F.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = HF
    kkt[:k, k] = yF
    kkt[k, :k] = yF
    rhs = np.concatenate([grad[F], [0.0]])
    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    d = np.zeros_like(alpha)
    d[F] = sol[:k]
    d[F] -= yF * (yF @ d[F]) / k  # keep exactly in y'd = 0 against round-off
    slope = float(grad @ d)
    if not slope > 0.0:
        return 0.0, d
    curv = float(d @ (H @ d))
    t = slope / curv if curv > 0.0 else np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (C - alpha) / d, np.inf)
        down = np.where(d < 0, -alpha / d, np.inf)
    t = min(t, float(up.min()), float(down.min()))
    if not np.isfinite(t):
        return 0.0, d
    return max(t, 0.0), d


def _bias_from_signed(alpha, Ha, y, C) -> tuple[float, bool]:
    # y_i f0(x_i) = (H a)_i, so f0(x_i) = y_i (H a)_i
    return _bias_from_scores(alpha, y * Ha, y, C)


def _bias_from_scores(alpha, scores, y, C) -> tuple[float, bool]:
    thr = support_threshold(C)
    if not np.any(alpha > thr):
        return 0.0, True
    margin = (alpha > thr) & (alpha < C - thr)
    if margin.any():
        return float(np.mean(y[margin] - scores[margin])), False
    # only bound support vectors: take the midpoint of the KKT-feasible interval
    lo, hi = -np.inf, np.inf
    at_zero = alpha <= thr
    at_c = ~at_zero
    pos, neg = y > 0, y < 0
    # alpha=0: y f >= 1 ; alpha=C: y f <= 1
    if np.any(at_zero & pos):
        lo = max(lo, float(np.max(1 - scores[at_zero & pos])))
    if np.any(at_zero & neg):
        hi = min(hi, float(np.min(-1 - scores[at_zero & neg])))
    if np.any(at_c & pos):
        hi = min(hi, float(np.min(1 - scores[at_c & pos])))
    if np.any(at_c & neg):
        lo = max(lo, float(np.max(-1 - scores[at_c & neg])))
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi), False
    if np.isfinite(lo):
        return lo, False
    if np.isfinite(hi):
        return hi, False
    return 0.0, True


def recover_bias(alpha, gram_unsigned, y, C: float) -> tuple[float, bool]:
    """KKT bias estimate; returns ``(b, degenerate)``.

    ``b`` averages ``y_i - sum_j a_j y_j k(x_j, x_i)`` over margin support
    vectors. Without margin vectors it is the midpoint of the interval allowed
    by the bound vectors. ``alpha == 0`` gives ``(0.0, True)``.
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    K = gram_unsigned.entries if isinstance(gram_unsigned, SignedGram) else np.asarray(gram_unsigned, dtype=float)
    scores = K @ (alpha * y)
    return _bias_from_scores(alpha, scores, y, C)


@dataclass
class SvmModel:
    """Trained discriminant ``f(x) = sum_i a_i y_i k(x_i, s(x)) + b``.

    ``points`` are stored already scaled into the kernel's box; ``scaling``
    maps raw features there.
    """

    kernel: Any
    points: np.ndarray
    labels: np.ndarray
    alpha: np.ndarray
    bias: float
    scaling: Any = None
    meta: dict = field(default_factory=dict)

    def compact(self) -> "SvmModel":
        """Copy keeping only support vectors."""
        C = self.meta.get("C")
        thr = support_threshold(C) if C else 0.0
        keep = self.alpha > thr
        return SvmModel(self.kernel, self.points[keep], self.labels[keep], self.alpha[keep], self.bias, self.scaling, dict(self.meta))

    def decision_function(self, X) -> np.ndarray:
        return decision_function(self, X)

    def predict(self, X) -> np.ndarray:
        return classify(self, X)


def _to_kernel_space(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.scaling is not None:
        X = model.scaling.apply(X, clamp=False)
    box = getattr(model.kernel, "box", None)
    if box is not None:
        outside = (X < box.lower) | (X > box.upper)
        if outside.any():
            warnings.warn(
                f"{int(outside.any(axis=1).sum())} point(s) outside the kernel box were clamped",
                stacklevel=3,
            )
            X = np.clip(X, box.lower, box.upper)
    return X


def decision_function(model: SvmModel, X) -> np.ndarray:
    Xs = _to_kernel_space(model, X)
    coef = model.alpha * model.labels
    if model.points.shape[0] == 0:
        return np.full(Xs.shape[0], model.bias)
    K = model.kernel.matrix(Xs, model.points)
    return K @ coef + model.bias


def classify(model: SvmModel, X) -> np.ndarray:
    f = decision_function(model, X)
    return np.where(f >= 0, 1, -1)
