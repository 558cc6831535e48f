"""
Comparison methods: the standard SVM, SVM(C+, C-) and the sliding-beta shift.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .kernel import KernelSpec
from .metrics import CountConstraint, RateKind, scope_mask
from .qp import PenaltyConfig, QpSolution, SupportModel, solve_standard_svm

logger = logging.getLogger(__name__)

SHIFT_MARGIN = 1e-9


@dataclass(frozen=True, eq=False)
class SlidingBetaModel:
    base: QpSolution
    beta_shift: float
    achieved: tuple[int, ...]
    required: tuple[int, ...]

    @property
    def beta(self) -> float:
        return self.base.beta + self.beta_shift

    def shift_scores(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=float) + self.beta_shift


def correct_counts(scores, labels, constraints: Sequence[CountConstraint], shift: float = 0.0) -> tuple[int, ...]:
    """Correctly classified instances in each constraint's scope after shifting."""
    scores = np.asarray(scores, dtype=float) + shift
    labels = np.asarray(labels)
    correct = labels * scores > 0
    return tuple(int((correct & scope_mask(c.rate, labels)).sum()) for c in constraints)


def _counts_at(shifts: np.ndarray, scores: np.ndarray, labels: np.ndarray, rate: RateKind) -> np.ndarray:
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == -1])
    # positive correct iff s + c > 0; negative correct iff s + c < 0
    pos_ok = pos.size - np.searchsorted(pos, -shifts, side="right")
    neg_ok = np.searchsorted(neg, -shifts, side="left")
    if rate is RateKind.TPR:
        return pos_ok
    if rate is RateKind.TNR:
        return neg_ok
    return pos_ok + neg_ok


def slide_beta(
    base: QpSolution,
    scores,
    labels,
    constraints: Sequence[CountConstraint],
) -> SlidingBetaModel:
    """
    Smallest intercept shift meeting every count target on the reference set.

    Candidate shifts are 0 and each -s_i +/- 1e-9, so a tie group at the
    boundary crosses together. TPR and TNR targets pull the intercept in
    opposite directions and cannot be combined.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"Got {scores.size} reference scores for {labels.size} labels")
    rates = {c.rate for c in constraints}
    if {RateKind.TPR, RateKind.TNR} <= rates:
        raise ValueError("Sliding beta cannot serve TPR and TNR targets at once (two-sided)")
    for c in constraints:
        n_scope = int(scope_mask(c.rate, labels).sum())
        if n_scope != c.scope_size:
            raise ValueError(
                f"{c.rate.value.upper()} target expects {c.scope_size} reference instances in scope, found {n_scope}"
            )
    required = tuple(c.required for c in constraints)
    if not constraints:
        return SlidingBetaModel(base, 0.0, (), ())

    shifts = np.concatenate([[0.0], -scores + SHIFT_MARGIN, -scores - SHIFT_MARGIN])
    if rates == {RateKind.TPR}:
        shifts = shifts[shifts >= 0]
    elif rates == {RateKind.TNR}:
        shifts = shifts[shifts <= 0]
    feasible = np.ones(shifts.size, dtype=bool)
    for c in constraints:
        feasible &= _counts_at(shifts, scores, labels, c.rate) >= c.required
    if not feasible.any():
        raise ValueError("Count target unreachable by any intercept shift")
    # smallest |shift| first, positive shift first among equals
    order = np.lexsort((-shifts, np.abs(shifts)))
    shift = float(shifts[order[np.argmax(feasible[order])]])
    achieved = correct_counts(scores, labels, constraints, shift)
    logger.debug("Sliding beta shift %.6g (required %s, achieved %s)", shift, required, achieved)
    return SlidingBetaModel(base=base, beta_shift=shift, achieved=achieved, required=required)


def fit_weighted_svm(data: Dataset, C_plus: float, C_minus: float, spec: KernelSpec, K=None) -> QpSolution:
    return solve_standard_svm(data, PenaltyConfig.independent(C_plus, C_minus), spec, K)


def fit_weighted_model(data: Dataset, C_plus: float, C_minus: float, spec: KernelSpec, K=None) -> SupportModel:
    return SupportModel(fit_weighted_svm(data, C_plus, C_minus, spec, K), data.X, spec)
