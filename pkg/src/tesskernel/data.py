"""Datasets, feature scaling, splits and synthetic generators."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

SCALE_LO = 0.05
SCALE_HI = 0.95


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: Optional[list] = None
    label_mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty m x n matrix, got shape {X.shape}")
        if y.size != X.shape[0]:
            raise DataError(f"{y.size} labels for {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite values")
        if not np.all(np.isin(y, (-1, 1))):
            raise DataError("labels must be -1/+1")
        self.features = X
        self.labels = y.astype(int)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names, dict(self.label_mapping))

    def to_csv(self, path: Union[str, Path]) -> None:
        names = self.feature_names or [f"x{i + 1}" for i in range(self.n)]
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(names) + ["label"])
            for row, lab in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _label_key(s: str):
    return float(s) if _is_number(s) else s


def map_labels(raw: Sequence[str]) -> tuple[np.ndarray, dict]:
    """Map a two-valued label column to -1/+1.

    Numeric labels: the smaller value maps to -1 (so {0, 1} -> {-1, +1} and
    {-1, 1} is unchanged). Text labels map in sorted order.
    """
    values = sorted({_label_key(s.strip()) for s in raw}, key=lambda v: (isinstance(v, str), v))
    if len(values) > 2:
        raise DataError(f"label column has {len(values)} classes, expected 2: {values[:5]}")
    if len(values) == 1:
        v = values[0]
        sign = 1 if (not isinstance(v, str) and v > 0) else -1
        mapping = {v: sign}
    else:
        mapping = {values[0]: -1, values[1]: 1}
    y = np.array([mapping[_label_key(s.strip())] for s in raw], dtype=int)
    return y, {str(k): v for k, v in mapping.items()}


def load_csv(path: Union[str, Path], label: Union[str, int] = -1, header: Optional[bool] = None) -> Dataset:
    """Read a comma-separated table; ``label`` is a column name or index.

    ``header=None`` detects a header row by the presence of non-numeric cells.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty dataset")
    if header is None:
        header = not all(_is_number(c) for c in rows[0] if c.strip())
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    if not body:
        raise DataError(f"{path}: empty dataset")
    width = len(rows[0])
    if isinstance(label, str) and not _is_int_string(label):
        if names is None or label not in names:
            raise DataError(f"{path}: no label column named {label!r}")
        lab_idx = names.index(label)
    else:
        lab_idx = int(label)
        if lab_idx < 0:
            lab_idx += width
        if not 0 <= lab_idx < width:
            raise DataError(f"{path}: label column {label} out of range for {width} columns")
    feat_idx = [i for i in range(width) if i != lab_idx]
    if not feat_idx:
        raise DataError(f"{path}: no feature columns")

    first_line = 2 if header else 1
    missing = []
    X = np.empty((len(body), len(feat_idx)))
    raw_labels = []
    for r, row in enumerate(body):
        line = first_line + r
        if len(row) != width or any(not row[i].strip() for i in range(width)):
            missing.append(line)
            continue
        for j, i in enumerate(feat_idx):
            try:
                X[r, j] = float(row[i])
            except ValueError:
                raise DataError(f"{path}: non-numeric feature {row[i]!r} at line {line}, column {i}") from None
        raw_labels.append(row[lab_idx])
    if missing:
        shown = ", ".join(str(x) for x in missing[:10])
        raise DataError(f"{path}: missing values on line(s) {shown}")
    y, mapping = map_labels(raw_labels)
    log.info("label mapping %s", mapping)
    fnames = [names[i] for i in feat_idx] if names else None
    return Dataset(X, y, fnames, mapping)


def _is_int_string(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


@dataclass
class ScalingTransform:
    """Per-feature affine map of the training range onto [0.05, 0.95]."""

    offset: np.ndarray
    gain: np.ndarray
    constant: np.ndarray
    clamped_count: int = 0

    def apply(self, features, clamp: bool = True) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[1] != self.offset.size:
            raise DataError(f"expected {self.offset.size} features, got {X.shape[1]}")
        Z = SCALE_LO + (X - self.offset) * self.gain
        Z[:, self.constant] = 0.5
        if clamp:
            out = (Z < 0.0) | (Z > 1.0)
            n_out = int(out.sum())
            if n_out:
                self.clamped_count += n_out
                log.info("clamped %d scaled value(s) into [0, 1]", n_out)
                Z = np.clip(Z, 0.0, 1.0)
        return Z

    def to_dict(self) -> dict:
        return {
            "offset": self.offset.tolist(),
            "gain": self.gain.tolist(),
            "constant": self.constant.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingTransform":
        return cls(np.array(d["offset"], dtype=float), np.array(d["gain"], dtype=float), np.array(d["constant"], dtype=bool))


def fit_scaling(features) -> ScalingTransform:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    constant = span <= 0
    gain = np.where(constant, 0.0, (SCALE_HI - SCALE_LO) / np.where(constant, 1.0, span))
    return ScalingTransform(lo, gain, constant)


def apply_scaling(transform: ScalingTransform, features, clamp: bool = True) -> np.ndarray:
    return transform.apply(features, clamp=clamp)


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def _check_two_classes(labels):
    classes = np.unique(labels)
    if classes.size < 2:
        raise DataError("need both classes present")
    return classes


def train_test_split(dataset: Dataset, spec: Optional[SplitSpec] = None) -> tuple[Dataset, Dataset]:
    """Random partition into train/test; per-class counts follow the overall ratio."""
    spec = spec or SplitSpec()
    y = dataset.labels
    if dataset.m < 2:
        raise DataError("need at least 2 rows to split")
    rng = np.random.default_rng(spec.seed)
    n_train = int(round(spec.train_fraction * dataset.m))
    n_train = min(max(n_train, 1), dataset.m - 1)
    if spec.stratified:
        classes = _check_two_classes(y)
        groups = [rng.permutation(np.flatnonzero(y == c)) for c in classes]
        exact = np.array([g.size * n_train / dataset.m for g in groups])
        take = np.floor(exact).astype(int)
        # largest remainder
        for i in np.argsort(-(exact - take), kind="stable")[: n_train - take.sum()]:
            take[i] += 1
        train = np.concatenate([g[:t] for g, t in zip(groups, take)])
        test = np.concatenate([g[t:] for g, t in zip(groups, take)])
    else:
        perm = rng.permutation(dataset.m)
        train, test = perm[:n_train], perm[n_train:]
    train.sort()
    test.sort()
    return dataset.subset(train), dataset.subset(test)


def kfold(labels, k: int = 5, seed: int = 0) -> np.ndarray:
    """Stratified fold id in ``0..k-1`` for each row."""
    y = np.asarray(labels).ravel()
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if y.size < k:
        raise DataError(f"{y.size} rows cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=int)
    order = []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if members.size < k:
            raise DataError(f"class {c} has {members.size} members, fewer than {k} folds")
        order.append(rng.permutation(members))
    # deal class by class round-robin, continuing the fold pointer across classes
    folds[np.concatenate(order)] = np.arange(y.size) % k
    return folds


def generate_circle(m: int, noise: float = 0.0, seed: int = 0, radius: float = 0.75) -> Dataset:
    """Uniform points in [-1, 1]^2, +1 inside the circle of given radius."""
    if m < 2:
        raise ValueError("m must be >= 2")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(m, 2))
    y = np.where(np.linalg.norm(X, axis=1) <= radius, 1, -1)
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return Dataset(X, y, ["x1", "x2"])


def generate_spiral(m: int, noise: float = 0.0, turns: float = 1.25, seed: int = 0) -> Dataset:
    """Two interleaved Archimedean arms ``a t (cos t, sin t)`` and its reflection.

    ``t`` is uniform on ``[pi/2, pi/2 + 2 pi turns]``; ``a`` scales the outer
    radius to 1. The default turns give the range [pi/2, 3 pi].
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    rng = np.random.default_rng(seed)
    t_lo = 0.5 * np.pi
    t_hi = t_lo + 2.0 * np.pi * turns
    a = 1.0 / t_hi
    t = rng.uniform(t_lo, t_hi, size=m)
    y = np.where(np.arange(m) < (m + 1) // 2, 1, -1)
    y = y[rng.permutation(m)]
    arm = np.stack([a * t * np.cos(t), a * t * np.sin(t)], axis=1)
    X = np.where(y[:, None] > 0, arm, -arm)
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return Dataset(X, y, ["x1", "x2"])
