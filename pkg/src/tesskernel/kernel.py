"""Tessellated kernels: monomial basis, box moments and kernel evaluation.

A tessellated kernel is

    k(x, y) = int_Z N(z, x)^T P N(z, y) dz,
    N(z, x) = [Z_d(z, x) * I(z >= x); Z_d(z, x) * (1 - I(z >= x))],

with ``P`` positive semidefinite and ``Z`` an axis-aligned box. Every integral
reduces to moments of monomials over sub-boxes of ``Z``, which are computed in
closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

# tolerance for "inside the box" checks
BOX_TOL = 1e-12
# relative tolerance on the PSD check: min eig >= -PSD_TOL * trace
PSD_TOL = 1e-10


class OutsideBoxError(ValueError):
    """A point lies outside the integration box."""


class NotPSDError(ValueError):
    """A matrix that must be positive semidefinite is not."""


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    """Exponent pairs ``(beta, alpha)`` for the monomials ``z^beta x^alpha``.

    Elements are all pairs with ``|beta| + |alpha| <= d``, in graded
    lexicographic order over the concatenated exponent vector ``(beta, alpha)``.
    """

    n: int
    d: int
    z_exponents: np.ndarray = field(repr=False)
    x_exponents: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.z_exponents.shape[0]

    @property
    def elements(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [
            (tuple(int(v) for v in b), tuple(int(v) for v in a))
            for b, a in zip(self.z_exponents, self.x_exponents)
        ]

    def x_monomials(self, points: np.ndarray) -> np.ndarray:
        """Rows ``[x^alpha_1, ..., x^alpha_q]`` for each point; shape (m, q)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones((pts.shape[0], len(self)))
        for i in range(self.n):
            exps = self.x_exponents[:, i]
            if not exps.any():
                continue
            out *= pts[:, i : i + 1] ** exps[None, :]
        return out

    @property
    def gamma_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct z-exponent sums ``beta_k + beta_l`` and their (q, q) index."""
        cached = self.__dict__.get("_gamma_table")
        if cached is None:
            sums = self.z_exponents[:, None, :] + self.z_exponents[None, :, :]
            flat = sums.reshape(-1, self.n)
            gammas, inverse = np.unique(flat, axis=0, return_inverse=True)
            cached = (gammas, inverse.reshape(len(self), len(self)))
            object.__setattr__(self, "_gamma_table", cached)
        return cached

    def descriptor(self) -> dict:
        return {"n": self.n, "d": self.d, "size": len(self), "order": "grlex(z,x)"}


def enumerate_basis(n: int, d: int) -> MonomialBasis:
    """All monomials of total degree <= d in ``(z_1..z_n, x_1..x_n)``.

    ``combinations_with_replacement`` over variable indices yields each degree
    block in graded lexicographic order, so no sort is needed.
    """
    if n < 1 or d < 0:
        raise ValueError(f"need n >= 1 and d >= 0, got n={n}, d={d}")
    rows = []
    for degree in range(d + 1):
        for combo in itertools.combinations_with_replacement(range(2 * n), degree):
            exps = [0] * (2 * n)
            for var in combo:
                exps[var] += 1
            rows.append(exps)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2 * n)
    return MonomialBasis(n, d, arr[:, :n].copy(), arr[:, n:].copy())


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different lengths")
        if not np.all(lo < hi):
            raise ValueError("box needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, n: int) -> "Box":
        return cls(np.zeros(n), np.ones(n))

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def check(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.n:
            raise ValueError(f"points have {pts.shape[1]} features, box has {self.n}")
        bad = np.any((pts < self.lower - BOX_TOL) | (pts > self.upper + BOX_TOL), axis=1)
        if bad.any():
            raise OutsideBoxError(f"{int(bad.sum())} point(s) outside the integration box, first at row {int(np.argmax(bad))}")
        return pts


def box_moment(box: Box, t: Sequence[float], gamma: Sequence[int]) -> float:
    """Integral of ``prod_i z_i^gamma_i`` over ``{z in box : z >= t}``."""
    t = np.asarray(t, dtype=float).ravel()
    g = np.asarray(gamma, dtype=np.int64).ravel()
    if t.size != box.n or g.size != box.n:
        raise ValueError("dimension mismatch between box, threshold and exponent")
    if np.any(g < 0):
        raise ValueError("exponents must be non-negative")
    c = np.clip(t, box.lower, box.upper)
    if np.any(c >= box.upper):
        return 0.0
    result = 1.0
    for ci, ui, gi in zip(c, box.upper, g):
        p = int(gi) + 1
        result *= (ui**p - ci**p) / p
    return float(result)


def _power_table(box: Box, thresholds: np.ndarray, max_power: int) -> np.ndarray:
    """1-D moments ``int_{c}^{u} s^g ds`` for g = 0..max_power; shape (..., n, G1)."""
    c = np.clip(thresholds, box.lower, box.upper)
    p = np.arange(1, max_power + 2)
    up = box.upper[..., None] ** p
    return (up - c[..., None] ** p) / p


def moments_for_gammas(box: Box, thresholds: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Moments over ``{z >= t}`` for each row of ``gammas``; shape (..., G)."""
    thresholds = np.asarray(thresholds, dtype=float)
    table = _power_table(box, thresholds, int(gammas.max(initial=0)))
    out = np.ones(thresholds.shape[:-1] + (gammas.shape[0],))
    for i in range(box.n):
        out *= table[..., i, :][..., gammas[:, i]]
    return out


class RegionMoments(NamedTuple):
    """Moment matrices ``[k, l]`` of ``z^(beta_k + beta_l)`` over four regions."""

    upper: np.ndarray  # z >= max(x, y)
    above_x: np.ndarray  # z >= x
    above_y: np.ndarray  # z >= y
    whole: np.ndarray  # whole box

    def partition(self, clamp: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Moments over the disjoint regions X11, X12, X21, X22."""
        x11 = self.upper
        x12 = self.above_x - self.upper
        x21 = self.above_y - self.upper
        x22 = self.whole - self.above_x - self.above_y + self.upper
        parts = (x11, x12, x21, x22)
        if clamp:
            parts = tuple(np.maximum(p, 0.0) for p in parts)
        return parts


def region_moment_terms(basis: MonomialBasis, box: Box, x, y) -> RegionMoments:
    x = box.check(x)[0]
    y = box.check(y)[0]
    gammas, index = basis.gamma_table
    thresholds = np.stack([np.maximum(x, y), x, y, box.lower])
    mom = moments_for_gammas(box, thresholds, gammas)
    return RegionMoments(*(m[index] for m in mom))


def _nonneg_box(box: Box) -> bool:
    return bool(np.all(box.lower >= 0))


@dataclass
class BlockPMatrix:
    """Symmetric 2x2-block matrix ``[[P11, P12], [P21, P22]]``."""

    matrix: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] % 2:
            raise ValueError(f"P must be square with even size, got {P.shape}")
        scale = max(1.0, float(np.abs(P).max(initial=0.0)))
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-12 * scale):
            raise ValueError("P must be symmetric")
        self.matrix = P

    @classmethod
    def from_blocks(cls, P11, P12, P21, P22) -> "BlockPMatrix":
        return cls(np.block([[P11, P12], [P21, P22]]))

    @property
    def half(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        h = self.half
        P = self.matrix
        return P[:h, :h], P[:h, h:], P[h:, :h], P[h:, h:]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        scale = max(abs(self.trace), float(np.abs(self.matrix).max(initial=0.0)))
        return self.min_eigenvalue() >= -tol * scale


@dataclass
class TessellatedKernel:
    basis: MonomialBasis
    box: Box
    Q1: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    Q4: np.ndarray
    psd_certificate: Optional[BlockPMatrix] = None

    def __post_init__(self):
        q = len(self.basis)
        for name in ("Q1", "Q2", "Q3", "Q4"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (q, q):
                raise ValueError(f"{name} must be {q}x{q}, got {arr.shape}")
            setattr(self, name, arr)
        if self.basis.n != self.box.n:
            raise ValueError("basis and box dimensions differ")

    @property
    def n(self) -> int:
        return self.basis.n

    def __call__(self, x, y) -> float:
        return kernel_eval(self, x, y)

    def matrix(self, X, Y=None) -> np.ndarray:
        """Unsigned kernel matrix between point sets."""
        return cross_gram(self, X, Y)

    def diag(self, X) -> np.ndarray:
        X = self.box.check(X)
        gammas, index = self.basis.gamma_table
        V = self.basis.x_monomials(X)
        mom_x = moments_for_gammas(self.box, X, gammas)[:, index]
        whole = moments_for_gammas(self.box, self.box.lower, gammas)[index]
        Qx = self.Q1 + self.Q2 + self.Q3
        inner = mom_x * Qx[None] + whole[None] * self.Q4[None]
        return np.einsum("ik,ikl,il->i", V, inner, V)


def from_P(P: BlockPMatrix, basis: MonomialBasis, box: Box, tol: float = PSD_TOL) -> TessellatedKernel:
    """Four-region coefficients of the kernel parametrized by ``P``.

    Region inclusion-exclusion gives
    ``Q1 = P11 - P12 - P21 + P22``, ``Q2 = P12 - P22``, ``Q3 = P21 - P22``,
    ``Q4 = P22``.
    """
    if not isinstance(P, BlockPMatrix):
        P = BlockPMatrix(P)
    if P.half != len(basis):
        raise ValueError(f"P has half-size {P.half}, basis has {len(basis)} elements")
    if not P.is_psd(tol):
        raise NotPSDError(f"P is not positive semidefinite (min eigenvalue {P.min_eigenvalue():.3e})")
    P11, P12, P21, P22 = P.blocks
    return TessellatedKernel(
        basis,
        box,
        Q1=P11 - P12 - P21 + P22,
        Q2=P12 - P22,
        Q3=P21 - P22,
        Q4=P22.copy(),
        psd_certificate=P,
    )


def to_P(K: TessellatedKernel) -> BlockPMatrix:
    """Inverse of :func:`from_P`; returns the stored certificate when present."""
    if K.psd_certificate is not None:
        return K.psd_certificate
    return BlockPMatrix.from_blocks(K.Q1 + K.Q2 + K.Q3 + K.Q4, K.Q2 + K.Q4, K.Q3 + K.Q4, K.Q4)


def kernel_eval(K: TessellatedKernel, x, y) -> float:
    """``k(x, y)`` from the four-region coefficients."""
    mom = region_moment_terms(K.basis, K.box, x, y)
    vx = K.basis.x_monomials(x)[0]
    vy = K.basis.x_monomials(y)[0]
    inner = K.Q1 * mom.upper + K.Q2 * mom.above_x + K.Q3 * mom.above_y + K.Q4 * mom.whole
    return float(vx @ inner @ vy)


def kernel_eval_pform(P: BlockPMatrix, basis: MonomialBasis, box: Box, x, y) -> float:
    """``k(x, y)`` directly from the P blocks and the disjoint region moments."""
    if not isinstance(P, BlockPMatrix):
        P = BlockPMatrix(P)
    mom = region_moment_terms(basis, box, x, y)
    parts = mom.partition(clamp=_nonneg_box(box))
    vx = basis.x_monomials(x)[0]
    vy = basis.x_monomials(y)[0]
    total = 0.0
    for Pij, Xij in zip(P.blocks, parts):
        total += vx @ (Pij * Xij) @ vy
    return float(total)


@dataclass
class SignedGram:
    entries: np.ndarray
    label_signed: bool = False

    def __post_init__(self):
        E = np.asarray(self.entries, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise ValueError("Gram matrix must be square")
        self.entries = E

    @property
    def m(self) -> int:
        return self.entries.shape[0]


def _qform_gram(K: TessellatedKernel, VX, VY, upper, mom_x, mom_y, whole) -> np.ndarray:
    """Assemble ``k(x_i, y_j)`` from per-gamma moment arrays.

    ``upper`` is (G, m1, m2), ``mom_x`` (m1, G), ``mom_y`` (m2, G), ``whole`` (G,).
    Entries are accumulated in a fixed order, so results do not depend on
    how callers batch the work.
    """
    gammas, index = K.basis.gamma_table
    G = gammas.shape[0]
    masks = index[None, :, :] == np.arange(G)[:, None, None]
    out = np.zeros((VX.shape[0], VY.shape[0]))
    for g in range(G):
        mask = masks[g]
        B1 = VX @ np.where(mask, K.Q1, 0.0) @ VY.T
        B2 = VX @ np.where(mask, K.Q2, 0.0) @ VY.T
        B3 = VX @ np.where(mask, K.Q3, 0.0) @ VY.T
        B4 = VX @ np.where(mask, K.Q4, 0.0) @ VY.T
        out += upper[g] * B1 + mom_x[:, g : g + 1] * B2 + mom_y[None, :, g] * B3 + whole[g] * B4
    return out


def cross_gram(K: TessellatedKernel, X, Y=None) -> np.ndarray:
    X = K.box.check(X)
    Y = X if Y is None else K.box.check(Y)
    gammas, _ = K.basis.gamma_table
    upper = moments_for_gammas(K.box, np.maximum(X[:, None, :], Y[None, :, :]), gammas)
    mom_x = moments_for_gammas(K.box, X, gammas)
    mom_y = moments_for_gammas(K.box, Y, gammas)
    whole = moments_for_gammas(K.box, K.box.lower, gammas)
    return _qform_gram(
        K,
        K.basis.x_monomials(X),
        K.basis.x_monomials(Y),
        np.moveaxis(upper, -1, 0),
        mom_x,
        mom_y,
        whole,
    )


def gram(K: TessellatedKernel, points, labels=None) -> SignedGram:
    """Kernel matrix on ``points``, optionally multiplied by ``y_i y_j``."""
    G = cross_gram(K, points)
    G = 0.5 * (G + G.T)
    if labels is None:
        return SignedGram(G, label_signed=False)
    y = np.asarray(labels, dtype=float).ravel()
    if y.size != G.shape[0]:
        raise ValueError(f"{y.size} labels for {G.shape[0]} points")
    return SignedGram(G * np.outer(y, y), label_signed=True)


def n_basis(n: int, d: int) -> int:
    return math.comb(2 * n + d, d)
