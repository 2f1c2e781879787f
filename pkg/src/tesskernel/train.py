"""End-to-end training of the supported learners on a :class:`Dataset`."""

from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, fit_scaling
from .kernel import BlockPMatrix, Box, enumerate_basis, from_P
from .learner import (
    LearnerConfig,
    cross_validate,
    generate_random_psd_basis,
    learn_mkl,
    learn_saddle,
    precompute_moments,
)
from .library import WeightedSumKernel, baseline_library, trace_scale
from .qp import ConvergenceWarning, QPConfig, SvmModel, classify, solve_svm_dual

log = logging.getLogger(__name__)

METHODS = ("tessellated-saddle", "mkl-random-tess", "mkl-gaussian-poly", "mkl-combined", "fixed-kernel")


@dataclass
class TrainConfig:
    method: str = "tessellated-saddle"
    degree: int = 1
    C: float = 1.0
    trace_bound: Optional[float] = None
    R: int = 300
    seed: int = 0
    max_outer_iter: int = 400
    tol: float = 1e-4
    qp_tol: float = 1e-6
    mkl_max_iter: int = 30
    mkl_tol: float = 1e-3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.R < 1:
            raise ValueError("R must be >= 1")

    def learner(self, C: Optional[float] = None) -> LearnerConfig:
        return LearnerConfig(
            degree=self.degree,
            C=self.C if C is None else C,
            trace_bound=self.trace_bound,
            max_outer_iter=self.max_outer_iter,
            tol=self.tol,
            qp_tol=self.qp_tol,
            rng_seed=self.seed,
        )

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FitSummary:
    method: str
    C: float
    objective: float
    iterations: int
    support_count: int
    wall_time: float
    converged: bool
    extra: dict = field(default_factory=dict)


def _quiet_qp(H, y, C, tol):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return solve_svm_dual(H, y, QPConfig(C=C, kkt_tol=tol))


def fit_scaled(X, y, cfg: TrainConfig, C: Optional[float] = None) -> tuple[SvmModel, FitSummary]:
    """Train on features already inside the unit box."""
    C = cfg.C if C is None else C
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).ravel().astype(int)
    yf = y.astype(float)
    n = X.shape[1]
    box = Box.unit(n)
    t0 = time.perf_counter()
    extra: dict = {}

    if cfg.method == "tessellated-saddle":
        res = learn_saddle(X, yf, cfg.learner(C), box=box)
        kernel, sol = res.kernel, res.solution
        iterations, converged = res.state.iteration, res.converged
        extra.update(phi_best=res.state.best_value, gap=res.gap, trace_bound=res.trace_bound)
    elif cfg.method == "fixed-kernel":
        basis = enumerate_basis(n, cfg.degree)
        c = cfg.trace_bound if cfg.trace_bound is not None else 2.0 * len(basis)
        kernel = from_P(BlockPMatrix(np.eye(2 * len(basis)) * (c / (2 * len(basis)))), basis, box)
        sol = _quiet_qp(kernel.matrix(X) * np.outer(yf, yf), yf, C, cfg.qp_tol)
        iterations, converged = sol.iterations, sol.converged
    else:
        kernel, sol, iterations, converged, extra = _fit_mkl(X, yf, cfg, C, box)

    model = SvmModel(
        kernel=kernel,
        points=X.copy(),
        labels=y.copy(),
        alpha=sol.alpha.copy(),
        bias=float(sol.bias),
        meta={"method": cfg.method, "C": C, "degree": cfg.degree, "config_digest": cfg.digest()},
    )
    summary = FitSummary(
        method=cfg.method,
        C=C,
        objective=float(sol.objective),
        iterations=int(iterations),
        support_count=int(sol.support_indices.size),
        wall_time=time.perf_counter() - t0,
        converged=bool(converged),
        extra=extra,
    )
    return model.compact(), summary


def _fit_mkl(X, y, cfg: TrainConfig, C: float, box: Box):
    n = X.shape[1]
    grams, parts = [], []
    tess = []
    if cfg.method in ("mkl-random-tess", "mkl-combined"):
        basis = enumerate_basis(n, cfg.degree)
        c = cfg.trace_bound if cfg.trace_bound is not None else 2.0 * len(basis)
        rb = generate_random_psd_basis(len(basis), cfg.R, c, cfg.seed)
        cache = precompute_moments(X, basis, box)
        for P in rb.matrices:
            G = cache.gram(from_P(P, basis, box))
            s = trace_scale(G)
            grams.append(G / s)
            tess.append((P, s))
            parts.append(("tess", len(tess) - 1))
    baseline = []
    if cfg.method in ("mkl-gaussian-poly", "mkl-combined"):
        for k in baseline_library(n):
            G = k.matrix(X)
            s = trace_scale(G)
            grams.append(G / s)
            baseline.append((k, s))
            parts.append(("base", len(baseline) - 1))
    res = learn_mkl(y, grams, C, max_iter=cfg.mkl_max_iter, tol=cfg.mkl_tol, qp_tol=cfg.qp_tol, check_psd=False)
    mu = res.weights.mu
    kernels, weights = [], []
    if tess:
        # sum_r mu_r k_{P_r} / s_r is itself the tessellated kernel of sum_r (mu_r / s_r) P_r
        P = np.zeros_like(tess[0][0].matrix)
        for i, (kind, j) in enumerate(parts):
            if kind == "tess" and mu[i] > 0:
                Pm, s = tess[j]
                P += (mu[i] / s) * Pm.matrix
        kernels.append(from_P(BlockPMatrix(P), basis, box))
        weights.append(1.0)
    for i, (kind, j) in enumerate(parts):
        if kind == "base" and mu[i] > 0:
            k, s = baseline[j]
            kernels.append(k)
            weights.append(mu[i] / s)
    kernel = kernels[0] if (len(kernels) == 1 and tess) else WeightedSumKernel(weights, kernels)
    extra = {"mu": mu.tolist(), "library_size": len(grams), "gap": res.gap}
    return kernel, res.solution, len(res.objective_trace), res.converged, extra


def accuracy(model: SvmModel, X, y) -> float:
    return float(np.mean(classify(model, X) == np.asarray(y).ravel()))


def train_model(
    dataset: Dataset,
    cfg: TrainConfig,
    C_grid: Optional[Sequence[float]] = None,
    folds: int = 5,
    cv_seed: Optional[int] = None,
) -> tuple[SvmModel, FitSummary]:
    """Fit scaling, pick C by cross-validation if a grid is given, then train."""
    scaling = fit_scaling(dataset.features)
    X = scaling.apply(dataset.features)
    y = dataset.labels
    C = cfg.C
    cv = None
    if C_grid:
        def fit_score(Xtr, ytr, Xva, yva, C):
            model, _ = fit_scaled(Xtr, ytr, cfg, C)
            return accuracy(model, Xva, yva)

        cv = cross_validate(X, y, C_grid, fit_score, folds=folds, seed=cfg.seed if cv_seed is None else cv_seed)
        C = cv.best_C
    model, summary = fit_scaled(X, y, cfg, C)
    model.scaling = scaling
    if cv is not None:
        summary.extra["cv_mean_scores"] = {repr(k): v for k, v in cv.mean_scores.items()}
        summary.extra["cv_flagged_folds"] = cv.flagged_folds
    return model, summary
