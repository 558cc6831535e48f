"""
Labeled datasets: CSV loading with one-hot encoding, fold-local
standardization, the seeded I/J split and per-class k-means compression.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.preprocessing import StandardScaler

logger = logging.getLogger(__name__)

SPLIT_RETRIES = 100
KMEANS_RESTARTS = 5
KMEANS_MAX_ITER = 50
AUTO_CATEGORICAL = "auto"


# === Domain types ===========================================================

@dataclass(frozen=True, eq=False)
class Instance:
    features: np.ndarray
    label: int
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise ValueError(f"Label must be -1 or +1, got {self.label!r}")
        if not self.weight > 0:
            raise ValueError(f"Instance weight must be positive, got {self.weight!r}")


@dataclass(frozen=True, eq=False)
class Standardization:
    """Per-feature centering and scaling fitted on one dataset."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.mean.size:
            raise ValueError(
                f"Dimension mismatch: standardization has {self.mean.size} features, data has {X.shape[1]}"
            )
        return (X - self.mean) / self.scale


@dataclass(frozen=True, eq=False)
class CsvSchema:
    label_col: str
    positive: str
    categorical: tuple[str, ...] = ()
    negative: str | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Row-ordered instances stored column-wise: X (n, d), labels y, weights w."""

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    standardization: Standardization | None = None
    # source columns that were one-hot expanded into feature_names
    categorical: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim != 2:
            raise ValueError(f"Feature matrix must be 2-D, got shape {X.shape}")
        y = np.asarray(self.y).astype(np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"Got {y.size} labels for {X.shape[0]} rows")
        bad = ~np.isin(y, (-1, 1))
        if bad.any():
            raise ValueError(f"Labels must be -1 or +1, found {sorted(set(y[bad].tolist()))}")
        w = np.ones(X.shape[0]) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != y.shape:
            raise ValueError(f"Got {w.size} weights for {y.size} rows")
        if (w <= 0).any():
            raise ValueError("Instance weights must be positive")
        names = tuple(self.feature_names) or tuple(f"x{k}" for k in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError(f"Got {len(names)} feature names for {X.shape[1]} columns")
        for arr in (X, y, w):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_instances(cls, instances: Sequence[Instance], **kwargs) -> "Dataset":
        if not instances:
            raise ValueError("Cannot build a dataset from zero instances")
        return cls(
            X=np.vstack([np.asarray(inst.features, dtype=float) for inst in instances]),
            y=np.array([inst.label for inst in instances]),
            weights=np.array([inst.weight for inst in instances]),
            **kwargs,
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def instances(self) -> list[Instance]:
        return [Instance(self.X[k], int(self.y[k]), float(self.weights[k])) for k in range(self.n)]

    def class_counts(self) -> tuple[int, int]:
        """(positives, negatives)."""
        n_pos = int((self.y == 1).sum())
        return n_pos, self.n - n_pos

    def has_both_classes(self) -> bool:
        n_pos, n_neg = self.class_counts()
        return n_pos > 0 and n_neg > 0

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return replace(self, X=self.X[idx], y=self.y[idx], weights=self.weights[idx])


@dataclass(frozen=True, eq=False)
class TrainSplit:
    """Disjoint training part I and anchor part J, as row indices."""

    I: np.ndarray
    J: np.ndarray
    I_pos: np.ndarray
    I_neg: np.ndarray
    J_pos: np.ndarray
    J_neg: np.ndarray

    @classmethod
    def from_indices(cls, I, J, labels) -> "TrainSplit":
        I = np.asarray(I, dtype=np.intp)
        J = np.asarray(J, dtype=np.intp)
        if np.intersect1d(I, J).size:
            raise ValueError("I and J must be disjoint")
        labels = np.asarray(labels)
        return cls(
            I=I,
            J=J,
            I_pos=I[labels[I] == 1],
            I_neg=I[labels[I] == -1],
            J_pos=J[labels[J] == 1],
            J_neg=J[labels[J] == -1],
        )

    @property
    def order(self) -> np.ndarray:
        """I followed by J; the row order every joint Gram matrix uses."""
        return np.concatenate([self.I, self.J])


# === Loading ================================================================

def resolve_categorical(frame: pd.DataFrame, categorical: Sequence[str] = ()) -> tuple[str, ...]:
    """The single entry "auto" selects every column holding a non-numeric value."""
    if tuple(categorical) == (AUTO_CATEGORICAL,):
        return tuple(
            str(col) for col in frame.columns
            if pd.to_numeric(frame[col], errors="coerce").isna().any()
        )
    return tuple(categorical)


def encode_features(frame: pd.DataFrame, categorical: Sequence[str] = ()) -> pd.DataFrame:
    """One-hot expand `categorical` (full indicator set) and check the rest is numeric."""
    categorical = resolve_categorical(frame, categorical)
    missing = [col for col in categorical if col not in frame.columns]
    if missing:
        raise ValueError(f"Categorical column(s) not found: {', '.join(missing)}")
    if categorical:
        frame = pd.get_dummies(
            frame, columns=list(categorical), prefix_sep="=", drop_first=False, dtype=float
        )
    encoded = {}
    for col in frame.columns:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ValueError(
                f"Non-numeric value {frame[col].iloc[row]!r} in column {col!r} (data row {row + 1})"
            )
        encoded[str(col)] = values.astype(float)
    return pd.DataFrame(encoded, index=frame.index)


def read_table(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ValueError(f"Dataset {path} is empty") from None
    if frame.empty:
        raise ValueError(f"Dataset {path} has a header but no rows")
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def labels_from_column(values: pd.Series, schema: CsvSchema) -> np.ndarray:
    raw = values.astype(str).str.strip()
    declared = {schema.positive} if schema.negative is None else {schema.positive, schema.negative}
    seen = set(raw.unique())
    if schema.negative is None:
        others = seen - {schema.positive}
        if len(others) > 1:
            raise ValueError(
                f"Label column {schema.label_col!r} holds more than two classes: {sorted(seen)}"
            )
    else:
        outside = seen - declared
        if outside:
            raise ValueError(
                f"Label value(s) {sorted(outside)} outside the declared classes {sorted(declared)}"
            )
    return np.where(raw == schema.positive, 1, -1)


def load_csv(path, schema: CsvSchema) -> Dataset:
    frame = read_table(path)
    if schema.label_col not in frame.columns:
        raise ValueError(f"Label column {schema.label_col!r} not found in {path}")
    y = labels_from_column(frame[schema.label_col], schema)
    frame = frame.drop(columns=[schema.label_col])
    categorical = resolve_categorical(frame, schema.categorical)
    features = encode_features(frame, categorical)
    if features.shape[1] == 0:
        raise ValueError(f"Dataset {path} has no feature columns")
    data = Dataset(
        X=features.to_numpy(), y=y, feature_names=tuple(features.columns), categorical=categorical
    )
    n_pos, n_neg = data.class_counts()
    logger.info("Loaded %s: %d rows (%d positive, %d negative), %d features",
                Path(path).name, data.n, n_pos, n_neg, data.dimension)
    return data


# === Standardization ========================================================

def standardize(fit: Dataset, apply_to: Sequence[Dataset]) -> list[Dataset]:
    """Fit zero-mean/unit-variance scaling on `fit` and apply it to each of `apply_to`."""
    if fit.n == 0:
        raise ValueError("Cannot standardize on an empty dataset")
    for data in apply_to:
        if data.dimension != fit.dimension:
            raise ValueError(
                f"Dimension mismatch: fit set has {fit.dimension} features, got {data.dimension}"
            )
    # StandardScaler uses the population std and leaves constant columns at scale 1.
    scaler = StandardScaler().fit(fit.X)
    params = Standardization(mean=scaler.mean_.copy(), scale=scaler.scale_.copy())
    return [
        replace(data, X=scaler.transform(data.X), standardization=params)
        for data in apply_to
    ]


# === Splitting ==============================================================

def split_half(sample, labels, seed: int) -> TrainSplit:
    """Seeded shuffle of `sample`; I gets the first ceil(n/2) indices, J the rest."""
    sample = np.asarray(sample, dtype=np.intp)
    labels = np.asarray(labels)
    if sample.size < 2:
        raise ValueError(f"split_half needs at least 2 indices, got {sample.size}")
    sample_labels = labels[sample]
    if not ((sample_labels == 1).any() and (sample_labels == -1).any()):
        raise ValueError("class missing in split: the sample holds a single class")

    rng = np.random.default_rng(seed)
    n_first = math.ceil(sample.size / 2)
    for attempt in range(SPLIT_RETRIES):
        order = rng.permutation(sample)
        I, J = order[:n_first], order[n_first:]
        if all(np.isin((1, -1), labels[part]).all() for part in (I, J)):
            if attempt:
                logger.debug("split_half needed %d reshuffles", attempt)
            return TrainSplit.from_indices(I, J, labels)
    raise ValueError(
        f"class missing in split: no shuffle out of {SPLIT_RETRIES} put both classes in both halves"
    )


# === Compression ============================================================

def compress_kmeans(data: Dataset, fraction: float, seed: int) -> Dataset:
    """
    Replace each class by k-means centroids weighted by cluster weight.

    k = max(1, round(fraction * class size)) per class; the centroid of a
    cluster is the weighted mean of its members and its weight the sum of
    their weights, so per-class totals are preserved.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"Compression fraction must lie in (0, 1], got {fraction}")
    blocks_X, blocks_y, blocks_w = [], [], []
    for label in (1, -1):
        mask = data.y == label
        if not mask.any():
            raise ValueError(f"Cannot compress: class {label:+d} is empty")
        X, w = data.X[mask], data.weights[mask]
        k = max(1, math.floor(fraction * X.shape[0] + 0.5))
        if k >= X.shape[0]:
            centroids, weights = X, w
        else:
            km = KMeans(
                n_clusters=k,
                init="k-means++",
                n_init=KMEANS_RESTARTS,
                max_iter=KMEANS_MAX_ITER,
                algorithm="lloyd",
                random_state=seed,
            )
            assign = km.fit_predict(X, sample_weight=w)
            weights = np.bincount(assign, weights=w, minlength=k)
            sums = np.zeros((k, X.shape[1]))
            np.add.at(sums, assign, X * w[:, None])
            keep = weights > 0
            centroids = sums[keep] / weights[keep, None]
            weights = weights[keep]
        logger.debug("Class %+d: %d instances -> %d centroids", label, X.shape[0], centroids.shape[0])
        blocks_X.append(centroids)
        blocks_y.append(np.full(centroids.shape[0], label))
        blocks_w.append(weights)
    return replace(
        data,
        X=np.vstack(blocks_X),
        y=np.concatenate(blocks_y),
        weights=np.concatenate(blocks_w),
    )
