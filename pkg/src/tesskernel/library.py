"""Fixed Gaussian/polynomial kernels and weighted kernel sums used as MKL libraries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .kernel import TessellatedKernel

GAUSSIAN_BANDWIDTHS = (0.5, 1.0, 2.0, 5.0, 10.0)
POLY_DEGREES = (1, 2, 3)


def _select(X, features):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X if features is None else X[:, list(features)]


@dataclass
class GaussianKernel:
    """``exp(-|x - y|^2 / (2 sigma^2))`` on an optional feature subset."""

    sigma: float
    features: Optional[tuple] = None

    def matrix(self, X, Y=None) -> np.ndarray:
        A = _select(X, self.features)
        B = A if Y is None else _select(Y, self.features)
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.sigma**2))

    def to_dict(self) -> dict:
        return {"type": "gaussian", "sigma": self.sigma, "features": None if self.features is None else list(self.features)}


@dataclass
class PolynomialKernel:
    """``(1 + x.y)^degree`` on an optional feature subset."""

    degree: int
    features: Optional[tuple] = None

    def matrix(self, X, Y=None) -> np.ndarray:
        A = _select(X, self.features)
        B = A if Y is None else _select(Y, self.features)
        return (1.0 + A @ B.T) ** self.degree

    def to_dict(self) -> dict:
        return {"type": "polynomial", "degree": self.degree, "features": None if self.features is None else list(self.features)}


@dataclass
class WeightedSumKernel:
    """``sum_r w_r k_r``; the weights already include any normalization."""

    weights: np.ndarray
    kernels: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != len(self.kernels):
            raise ValueError("one weight per kernel required")

    @property
    def box(self):
        for k in self.kernels:
            if isinstance(k, TessellatedKernel):
                return k.box
        return None

    def matrix(self, X, Y=None) -> np.ndarray:
        out = None
        for w, k in zip(self.weights, self.kernels):
            if w == 0.0:
                continue
            part = w * k.matrix(X, Y)
            out = part if out is None else out + part
        if out is None:
            A = np.atleast_2d(X)
            B = A if Y is None else np.atleast_2d(Y)
            return np.zeros((A.shape[0], B.shape[0]))
        return out


def baseline_library(n: int, bandwidths: Sequence[float] = GAUSSIAN_BANDWIDTHS, degrees: Sequence[int] = POLY_DEGREES) -> list:
    """Gaussian and polynomial kernels on all features and on each single feature."""
    subsets = [None] + [(i,) for i in range(n)] if n > 1 else [None]
    lib = []
    for feats in subsets:
        lib.extend(GaussianKernel(float(s), feats) for s in bandwidths)
        lib.extend(PolynomialKernel(int(d), feats) for d in degrees)
    return lib


def trace_scale(G) -> float:
    """Mean diagonal of a kernel matrix; kernels are divided by it before mixing."""
    t = float(np.trace(G)) / G.shape[0]
    return t if t > 0 else 1.0
