"""
Performance rates, Hoeffding-adjusted thresholds and count-form targets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Rounding slack for the ceiling, in units of machine epsilon of p * n.
CEIL_ULPS = 8


class RateKind(str, Enum):
    TPR = "tpr"
    TNR = "tnr"
    ACC = "acc"

    @property
    def scope_label(self) -> int | None:
        """Class the rate is measured on; None means every instance."""
        return {RateKind.TPR: 1, RateKind.TNR: -1}.get(self)


def scope_mask(rate: RateKind, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if rate.scope_label is None:
        return np.ones(labels.shape, dtype=bool)
    return labels == rate.scope_label


@dataclass(frozen=True)
class PerformanceTarget:
    rate: RateKind
    p0: float
    alpha: float = 0.05
    delta: float = 0.025

    def __post_init__(self) -> None:
        object.__setattr__(self, "rate", RateKind(self.rate))
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError(f"p0 must lie in [0, 1], got {self.p0}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.delta < 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")

    @property
    def uplifted(self) -> float:
        return min(1.0, self.p0 + self.delta)


@dataclass(frozen=True)
class CountConstraint:
    """At least `required` of the `scope_size` anchors in scope must be classified correctly."""

    rate: RateKind
    required: int
    scope_size: int
    p_star: float
    clipped: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "rate", RateKind(self.rate))
        if self.scope_size < 1:
            raise ValueError(f"scope_size must be positive, got {self.scope_size}")
        if not 0 <= self.required <= self.scope_size:
            raise ValueError(
                f"required={self.required} must lie in [0, scope_size={self.scope_size}]"
            )


@dataclass(frozen=True)
class RateReport:
    tpr: float
    tnr: float
    acc: float
    gmean: float
    tp: int
    fp: int
    tn: int
    fn: int
    flags: tuple[str, ...] = ()

    def rate(self, kind: RateKind) -> float:
        return getattr(self, RateKind(kind).value)

    def as_dict(self) -> dict:
        return {
            "tpr": self.tpr,
            "tnr": self.tnr,
            "acc": self.acc,
            "gmean": self.gmean,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "flags": list(self.flags),
        }


def hoeffding_threshold(target: PerformanceTarget, n: int) -> float:
    """
    Sample-level threshold p* that certifies the true rate exceeds p0.

    Returns min(1, p0 + delta) + sqrt(ln(alpha) / (-2 n)). The result may
    exceed 1; count_target clips it.
    """
    if n < 1:
        raise ValueError(f"Scope size must be at least 1, got {n}")
    return target.uplifted + math.sqrt(math.log(target.alpha) / (-2.0 * n))


def hoeffding_confidence(p_hat: float, p0: float, n: int) -> float:
    """Confidence that the true rate exceeds p0 given a sample rate p_hat over n instances."""
    if n < 1:
        raise ValueError(f"Scope size must be at least 1, got {n}")
    if p_hat <= p0:
        return 0.0
    return 1.0 - math.exp(-2.0 * n * (p_hat - p0) ** 2)


def count_target(p_star: float, scope_size: int, rate: RateKind = RateKind.TPR) -> CountConstraint:
    """Smallest anchor count whose rate reaches p_star, clipped to scope_size.

    p_star * scope_size is rounded up after subtracting a slack of CEIL_ULPS
    machine epsilons relative to the product, so 0.1 * 3 over ten anchors needs
    3, not 4. The resulting required / scope_size can therefore sit below
    p_star by at most that slack, never by a whole count.
    """
    if scope_size < 1:
        raise ValueError(f"scope_size must be positive, got {scope_size}")
    if p_star <= 0:
        return CountConstraint(rate=rate, required=0, scope_size=scope_size, p_star=p_star)
    product = p_star * scope_size
    raw = math.ceil(product - CEIL_ULPS * np.finfo(float).eps * max(1.0, product))
    clipped = raw > scope_size
    if clipped:
        logger.warning(
            "%s target %.6f over %d anchors exceeds 1; requiring all %d",
            RateKind(rate).value.upper(), p_star, scope_size, scope_size,
        )
    return CountConstraint(
        rate=rate,
        required=min(scope_size, raw),
        scope_size=scope_size,
        p_star=p_star,
        clipped=clipped,
    )


def build_count_constraints(targets: Sequence[PerformanceTarget], labels_J) -> list[CountConstraint]:
    """One count constraint per target, scoped on the anchor labels."""
    labels_J = np.asarray(labels_J)
    constraints = []
    for target in targets:
        n_scope = int(scope_mask(target.rate, labels_J).sum())
        if n_scope == 0:
            raise ValueError(f"No anchors in scope for the {target.rate.value.upper()} target")
        p_star = hoeffding_threshold(target, n_scope)
        constraints.append(count_target(p_star, n_scope, target.rate))
    return constraints


def evaluate(scores, labels, seed: int = 0) -> RateReport:
    """Rates of sign(scores) against labels; exact zeros are settled by a seeded coin."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"Got {scores.size} scores for {labels.size} labels")
    if scores.size == 0:
        raise ValueError("Cannot evaluate an empty prediction set")

    flags = []
    pred = np.sign(scores).astype(np.int64)
    ties = pred == 0
    if ties.any():
        rng = np.random.default_rng(seed)
        pred[ties] = rng.choice(np.array([-1, 1]), size=int(ties.sum()))
        flags.append("zero_scores_randomized")
        logger.warning("%d score(s) exactly zero; classified by coin flip", int(ties.sum()))

    pos, neg = labels == 1, labels == -1
    tp = int((pos & (pred == 1)).sum())
    fn = int((pos & (pred == -1)).sum())
    tn = int((neg & (pred == -1)).sum())
    fp = int((neg & (pred == 1)).sum())

    if tp + fn:
        tpr = tp / (tp + fn)
    else:
        tpr = 1.0
        flags.append("no_positives")
        logger.warning("No positive instances; TPR reported as 1")
    if tn + fp:
        tnr = tn / (tn + fp)
    else:
        tnr = 1.0
        flags.append("no_negatives")
        logger.warning("No negative instances; TNR reported as 1")

    return RateReport(
        tpr=tpr,
        tnr=tnr,
        acc=(tp + tn) / scores.size,
        gmean=math.sqrt(tpr * tnr),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        flags=tuple(flags),
    )
