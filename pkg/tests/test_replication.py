"""Benchmark replications; they need the dataset CSVs in the data directory."""

import pytest

from csvm.core.dataset import CsvSchema, load_csv
from csvm.core.evalharness import CvPlan, GridSpec, Method, SolverConfig, run_algorithm1
from csvm.core.metrics import PerformanceTarget, RateKind
from csvm.core.run_helpers import dataset_path, lookup_dataset

pytestmark = pytest.mark.slow


def _load(name: str):
    try:
        path = dataset_path(name)
    except FileNotFoundError:
        pytest.skip(f"{name}.csv not available")
    entry = lookup_dataset(name)
    return load_csv(path, CsvSchema(entry.label_col, entry.positive, entry.categorical))


def test_wisconsin_standard_svm_rates():
    data = _load("wisconsin")
    plan = CvPlan.for_dataset(data, methods=(Method.SVM,))
    report = run_algorithm1(data, plan, GridSpec.full(), None)
    summary = report.summary[Method.SVM]
    assert summary.mean["tnr"] == pytest.approx(0.99, abs=0.04)
    assert summary.mean["tpr"] == pytest.approx(0.948, abs=0.07)


def test_australian_csvm_lifts_tpr():
    data = _load("australian")
    plan = CvPlan.for_dataset(data, outer_folds=5, inner_folds=5, methods=(Method.SVM, Method.CSVM))
    target = PerformanceTarget(RateKind.TPR, p0=0.0)
    report = run_algorithm1(data, plan, GridSpec.small(), target, SolverConfig(time_limit=60.0))
    svm, csvm = report.summary[Method.SVM], report.summary[Method.CSVM]
    assert csvm.mean["tpr"] >= svm.mean["tpr"] + 0.02
    assert csvm.mean["tpr"] >= csvm.mean_target - 0.05
