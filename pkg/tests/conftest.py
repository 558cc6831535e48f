from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from csvm.core.dataset import Dataset


def two_blobs(n_per_class: int = 10, spread: float = 0.5, seed: int = 0) -> Dataset:
    """Two well separated Gaussian blobs centred at (3, 3) and (-3, -3)."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=3.0, scale=spread, size=(n_per_class, 2))
    neg = rng.normal(loc=-3.0, scale=spread, size=(n_per_class, 2))
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    return Dataset(X=X, y=y)


def interleaved_line(n: int = 40) -> Dataset:
    """Points on a line with alternating labels; no linear rule gets both classes right."""
    X = (np.arange(n, dtype=float) / 10.0).reshape(-1, 1)
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    return Dataset(X=X, y=y)


def overlapping(n: int = 24, seed: int = 1) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    X[y == 1] += 0.6
    return Dataset(X=X, y=y)


@pytest.fixture
def separable() -> Dataset:
    return two_blobs()


@pytest.fixture
def interleaved() -> Dataset:
    return interleaved_line()


def write_dataset_csv(path, data: Dataset, positive: str = "yes", negative: str = "no") -> str:
    frame = pd.DataFrame(data.X, columns=list(data.feature_names))
    frame["class"] = np.where(data.y == 1, positive, negative)
    frame.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def separable_csv(tmp_path) -> str:
    return write_dataset_csv(tmp_path / "blobs.csv", two_blobs())


@pytest.fixture
def interleaved_csv(tmp_path) -> str:
    return write_dataset_csv(tmp_path / "line.csv", interleaved_line())
