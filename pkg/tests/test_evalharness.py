import math

import numpy as np
import pytest

from conftest import overlapping, two_blobs
from csvm.core import evalharness, qp
from csvm.core.dataset import Dataset
from csvm.core.evalharness import (
    CvPlan,
    FoldRecord,
    GridSpec,
    Method,
    MethodFold,
    Selection,
    SolverConfig,
    aggregate,
    fit_csvm,
    outer_splits,
    run_algorithm1,
    tune_grid,
)
from csvm.core.kernel import GramCache, KernelKind, KernelSpec
from csvm.core.metrics import PerformanceTarget, RateKind, RateReport

TINY = GridSpec(C_values=(8.0,), gamma_values=(0.5,), C_plus_values=(8.0,), C_minus_values=(8.0,), name="tiny")


def _rates(tpr: float, tnr: float) -> RateReport:
    return RateReport(tpr=tpr, tnr=tnr, acc=(tpr + tnr) / 2, gmean=math.sqrt(tpr * tnr), tp=0, fp=0, tn=0, fn=0)


def _strip_timings(tree):
    if isinstance(tree, dict):
        return {k: _strip_timings(v) for k, v in tree.items() if not k.endswith("_seconds")}
    if isinstance(tree, list):
        return [_strip_timings(v) for v in tree]
    return tree


# === Grid ===================================================================

def test_grid_candidates_order():
    grid = GridSpec(C_values=(1.0, 2.0), gamma_values=(0.5, 4.0))
    cands = grid.candidates(Method.SVM)
    assert cands == [
        {"C": 1.0, "gamma": 0.5}, {"C": 2.0, "gamma": 0.5},
        {"C": 1.0, "gamma": 4.0}, {"C": 2.0, "gamma": 4.0},
    ]
    assert grid.candidates(Method.SVM, KernelKind.LINEAR) == [{"C": 1.0, "gamma": None}, {"C": 2.0, "gamma": None}]
    assert len(GridSpec.full().candidates(Method.WEIGHTED)) == 11**3


def test_grid_rejects_unsorted():
    with pytest.raises(ValueError):
        GridSpec(C_values=(2.0, 1.0))


def test_plan_rules():
    small = two_blobs(n_per_class=10)
    plan = CvPlan.for_dataset(small)
    assert (plan.outer_folds, plan.selection, plan.compress) == (10, Selection.ACC, False)
    X = np.zeros((1200, 1))
    y = np.where(np.arange(1200) < 200, 1, -1)
    big = CvPlan.for_dataset(Dataset(X=X, y=y))
    assert (big.outer_folds, big.selection, big.compress) == (5, Selection.GMEAN, True)


# === Tuning =================================================================

def _fake_scores(monkeypatch, table):
    def fake(train, method, params, plan, target, solver, splits, grams=None):
        score = table[params["C"]]
        if score is None:
            raise RuntimeError("diverged")
        return score, {"tpr": score, "tnr": score, "acc": score, "gmean": score}

    monkeypatch.setattr(evalharness, "score_candidate", fake)


GRID_TWO = GridSpec(C_values=(1.0, 2.0), gamma_values=(1.0,))


def test_tune_grid_picks_better(monkeypatch, separable):
    _fake_scores(monkeypatch, {1.0: 0.9, 2.0: 0.8})
    result = tune_grid(separable, GRID_TWO, CvPlan(), Method.SVM, splits=[])
    assert result.params["C"] == 1.0
    assert result.score == 0.9


def test_tune_grid_later_candidate_wins_ties(monkeypatch, separable):
    _fake_scores(monkeypatch, {1.0: 0.85, 2.0: 0.85})
    result = tune_grid(separable, GRID_TWO, CvPlan(), Method.SVM, splits=[])
    assert result.as_tuple() == (2.0, 1.0)


def test_tune_grid_skips_failures(monkeypatch, separable):
    _fake_scores(monkeypatch, {1.0: 0.7, 2.0: None})
    result = tune_grid(separable, GRID_TWO, CvPlan(), Method.SVM, splits=[])
    assert result.params["C"] == 1.0
    assert result.failed == 1


def test_tune_grid_all_fail(monkeypatch, separable):
    _fake_scores(monkeypatch, {1.0: None, 2.0: None})
    with pytest.raises(RuntimeError):
        tune_grid(separable, GRID_TWO, CvPlan(), Method.SVM, splits=[])


# === Aggregation ============================================================

def _fold(k: int, tpr: float) -> FoldRecord:
    return FoldRecord(fold=k, train_size=10, validation_size=5, p0=0.9,
                      results={Method.SVM: MethodFold(Method.SVM, _rates(tpr, 1.0), {"C": 1.0, "gamma": 1.0})})


def test_aggregate_mean_and_sample_std():
    report = aggregate([_fold(0, 0.8), _fold(1, 1.0)], target_rate=RateKind.TPR)
    summary = report.summary[Method.SVM]
    assert summary.mean["tpr"] == pytest.approx(0.9)
    assert summary.std["tpr"] == pytest.approx(0.141421356, rel=1e-6)
    assert summary.n_folds == 2


def test_aggregate_skips_failed_folds():
    failed = FoldRecord(fold=2, train_size=10, validation_size=5, p0=None,
                        results={Method.SVM: MethodFold(Method.SVM, error="RuntimeError: boom")})
    report = aggregate([_fold(0, 0.8), _fold(1, 1.0), failed])
    assert report.summary[Method.SVM].n_folds == 2


def test_aggregate_needs_two_folds():
    with pytest.raises(ValueError):
        aggregate([_fold(0, 0.8)])


def test_report_tables():
    report = aggregate([_fold(0, 0.8), _fold(1, 1.0)], target_rate=RateKind.TPR)
    assert "SVM" in report.format_table()
    rates_table = report.format_rates_table(Method.SVM)
    assert "% positive instances well classified" in rates_table
    assert " 90.0" in rates_table


# === Splits and fitting =====================================================

def test_outer_splits_are_stratified_and_disjoint():
    data = overlapping(n=40, seed=0)
    plan = CvPlan(outer_folds=4, inner_folds=2)
    splits = outer_splits(data, plan)
    seen = np.concatenate([va for _, va in splits])
    assert sorted(seen) == list(range(40))
    for tr, va in splits:
        assert np.intersect1d(tr, va).size == 0
        assert (data.y[va] == 1).sum() == 5


def test_fit_csvm_meets_anchor_target():
    data = overlapping(n=30, seed=3)
    target = PerformanceTarget(RateKind.TPR, p0=0.6)
    fit = fit_csvm(data, 4.0, KernelSpec(KernelKind.RBF, gamma=0.5), [target],
                   seed=0, solver=SolverConfig(time_limit=60.0))
    achieved = fit.result.achieved_counts(fit.problem)
    assert all(a >= c.required for a, c in zip(achieved, fit.constraints))
    J_scores = fit.decision_function(data.X[fit.split.J])
    correct = int(((J_scores > 0) & (data.y[fit.split.J] == 1)).sum())
    assert correct >= fit.constraints[0].required


# === End to end =============================================================

def _tiny_plan(**overrides) -> CvPlan:
    settings = dict(outer_folds=2, inner_folds=2, kernel=KernelKind.LINEAR, estimate_p0=False, seed=0)
    settings.update(overrides)
    return CvPlan(**settings)


def test_separable_run_is_perfect(separable):
    target = PerformanceTarget(RateKind.TPR, p0=0.5)
    report = run_algorithm1(separable, _tiny_plan(), TINY, target, SolverConfig(time_limit=30.0))
    assert set(report.summary) == set(Method)
    for method, summary in report.summary.items():
        assert summary.mean["tpr"] == pytest.approx(1.0), method
        assert summary.mean["tnr"] == pytest.approx(1.0), method


def test_run_is_deterministic(separable):
    target = PerformanceTarget(RateKind.TPR, p0=0.5)
    plan = _tiny_plan(methods=(Method.SVM, Method.SLIDING, Method.CSVM))
    first = run_algorithm1(separable, plan, TINY, target, SolverConfig(time_limit=30.0)).to_dict()
    second = run_algorithm1(separable, plan, TINY, target, SolverConfig(time_limit=30.0)).to_dict()
    assert _strip_timings(first) == _strip_timings(second)


def test_run_without_target_slides_nothing(separable):
    report = run_algorithm1(separable, _tiny_plan(methods=(Method.SVM, Method.SLIDING)), TINY, None)
    for record in report.folds:
        svm = record.results[Method.SVM].rates
        sliding = record.results[Method.SLIDING].rates
        assert svm == sliding


def test_run_without_target_csvm_matches_svm():
    data = overlapping(n=40, seed=2)
    plan = _tiny_plan(kernel=KernelKind.RBF, methods=(Method.SVM, Method.CSVM))
    grid = GridSpec(C_values=(1.0, 8.0), gamma_values=(0.5, 2.0), name="two-by-two")
    report = run_algorithm1(data, plan, grid, None)
    for record in report.folds:
        svm, csvm = record.results[Method.SVM], record.results[Method.CSVM]
        assert csvm.error is None
        assert csvm.params == svm.params
        assert csvm.rates == svm.rates
    assert report.summary[Method.CSVM].mean == report.summary[Method.SVM].mean


def _rows(X) -> set:
    return {tuple(row) for row in np.asarray(X)}


def _record_outer_splits(monkeypatch) -> list:
    seen = []
    original = evalharness.outer_splits

    def recording(data, plan):
        splits = original(data, plan)
        seen.extend((_rows(data.X[tr]), _rows(data.X[va])) for tr, va in splits)
        return splits

    monkeypatch.setattr(evalharness, "outer_splits", recording)
    return seen


def _assert_inside_one_training_part(rows: set, folds: list) -> None:
    assert any(rows <= train and not rows & val for train, val in folds)


def test_fits_never_see_validation_rows(monkeypatch):
    data = overlapping(n=40, seed=4)
    folds = _record_outer_splits(monkeypatch)
    trained = []
    original = evalharness.fit_method

    def recording(train, *args, **kwargs):
        trained.append(_rows(train.X))
        return original(train, *args, **kwargs)

    monkeypatch.setattr(evalharness, "fit_method", recording)
    target = PerformanceTarget(RateKind.TPR, p0=0.5)
    plan = _tiny_plan(global_standardize=True)
    run_algorithm1(data, plan, TINY, target, SolverConfig(time_limit=30.0))
    assert trained
    for rows in trained:
        _assert_inside_one_training_part(rows, folds)


def test_standardization_is_fitted_on_training_rows_only(monkeypatch):
    data = overlapping(n=40, seed=4)
    folds = _record_outer_splits(monkeypatch)
    fitted = []
    original = evalharness.standardize

    def recording(fit, apply_to):
        fitted.append(_rows(fit.X))
        return original(fit, apply_to)

    monkeypatch.setattr(evalharness, "standardize", recording)
    run_algorithm1(data, _tiny_plan(methods=(Method.SVM, Method.WEIGHTED)), TINY, None)
    assert len(fitted) == 2
    for rows in fitted:
        _assert_inside_one_training_part(rows, folds)


def test_fold_fits_reuse_the_cached_gram(monkeypatch):
    def forbidden(spec, points):
        raise AssertionError("Gram recomputed outside the fold cache")

    monkeypatch.setattr(evalharness, "gram", forbidden)
    monkeypatch.setattr(qp, "gram", forbidden)
    target = PerformanceTarget(RateKind.TPR, p0=0.5)
    plan = _tiny_plan(kernel=KernelKind.RBF)
    report = run_algorithm1(two_blobs(), plan, TINY, target, SolverConfig(time_limit=30.0))
    for record in report.folds:
        assert all(entry.error is None for entry in record.results.values())


@pytest.mark.parametrize("method", [Method.SVM, Method.WEIGHTED, Method.CSVM])
def test_cached_gram_gives_the_same_fit(method):
    data = overlapping(n=30, seed=6)
    plan = _tiny_plan(kernel=KernelKind.RBF)
    rows = np.arange(3, 27)
    train = data.subset(rows)
    params = TINY.candidates(method)[0]
    target = PerformanceTarget(RateKind.TPR, p0=0.5) if method is Method.CSVM else None
    solver = SolverConfig(time_limit=30.0)
    direct = evalharness.fit_method(train, method, params, plan, target, solver)
    cached = evalharness.fit_method(train, method, params, plan, target, solver,
                                    grams=GramCache(data.X), rows=rows)
    np.testing.assert_allclose(cached.decision_function(data.X), direct.decision_function(data.X), atol=1e-6)
