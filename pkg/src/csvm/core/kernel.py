"""
Kernel functions and Gram matrices shared by every solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform


class KernelKind(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice; `gamma` is the RBF width and is ignored for linear."""

    kind: KernelKind = KernelKind.RBF
    gamma: float | None = None

    def __post_init__(self) -> None:
        kind = KernelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is KernelKind.RBF:
            if self.gamma is None or not float(self.gamma) > 0:
                raise ValueError(f"RBF kernel needs gamma > 0, got {self.gamma!r}")
            object.__setattr__(self, "gamma", float(self.gamma))
        else:
            object.__setattr__(self, "gamma", None)

    def describe(self) -> str:
        if self.kind is KernelKind.RBF:
            return f"rbf(gamma={self.gamma:g})"
        return "linear"


def _as_matrix(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"Expected a 2-D array of points, got shape {X.shape}")
    return X


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    """K(x, x') for a single pair of vectors."""
    a = np.asarray(x, dtype=float).ravel()
    b = np.asarray(x_prime, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"Dimension mismatch: {a.size} vs {b.size}")
    if spec.kind is KernelKind.LINEAR:
        return float(a @ b)
    diff = a - b
    return float(np.exp(-spec.gamma * (diff @ diff)))


def cross_kernel(spec: KernelSpec, rows, cols) -> np.ndarray:
    """Kernel values between every row of `rows` and every row of `cols`."""
    A = _as_matrix(rows)
    B = _as_matrix(cols)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"Dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind is KernelKind.LINEAR:
        return A @ B.T
    return np.exp(-spec.gamma * cdist(A, B, "sqeuclidean"))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    spec: KernelSpec

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def block(self, rows, cols) -> np.ndarray:
        return self.entries[np.ix_(np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp))]


def gram(spec: KernelSpec, points) -> GramMatrix:
    """Symmetric Gram matrix of `points`; the upper triangle is mirrored."""
    X = _as_matrix(points)
    if X.shape[0] == 0:
        raise ValueError("Cannot build a Gram matrix of zero points")
    if spec.kind is KernelKind.LINEAR:
        G = X @ X.T
        upper = np.triu(G)
        entries = upper + np.triu(G, 1).T
    elif X.shape[0] == 1:
        entries = np.ones((1, 1))
    else:
        entries = np.exp(-spec.gamma * squareform(pdist(X, "sqeuclidean")))
    entries.setflags(write=False)
    return GramMatrix(entries=entries, spec=spec)


@dataclass
class GramCache:
    """
    One Gram matrix per kernel spec over a fixed point set (an outer training
    fold); fits on any subset of those points slice their block from it.
    """

    points: np.ndarray
    _store: dict = field(default_factory=dict, repr=False)

    def get(self, spec: KernelSpec) -> GramMatrix:
        if spec not in self._store:
            self._store[spec] = gram(spec, self.points)
        return self._store[spec]

    def block(self, spec: KernelSpec, rows=None) -> np.ndarray:
        """Gram of the points at `rows` (all points when None), in that order."""
        matrix = self.get(spec)
        return matrix.entries if rows is None else matrix.block(rows, rows)

    @property
    def specs(self) -> tuple[KernelSpec, ...]:
        return tuple(self._store)
