import math

import pandas as pd
from openpyxl import load_workbook

from csvm.core.evalharness import FoldRecord, Method, MethodFold, aggregate
from csvm.core.excel_utils import fold_frame, summary_frame, write_report_to_excel
from csvm.core.metrics import RateKind, RateReport


def _report():
    folds = []
    for k, tpr in enumerate((0.8, 1.0)):
        rates = RateReport(tpr=tpr, tnr=0.9, acc=0.85, gmean=math.sqrt(0.9 * tpr), tp=4, fp=1, tn=9, fn=1)
        folds.append(FoldRecord(
            fold=k, train_size=20, validation_size=10, p0=0.9,
            results={
                Method.SVM: MethodFold(Method.SVM, rates, {"C": 1.0, "gamma": 0.5}),
                Method.CSVM: MethodFold(Method.CSVM, rates, {"C": 2.0, "gamma": 0.5}, p_star=0.95,
                                        status="proven_optimal", gap=0.0),
            },
        ))
    return aggregate(folds, target_rate=RateKind.TPR)


def test_summary_and_fold_frames():
    report = _report()
    summary = summary_frame(report)
    assert list(summary["Method"]) == ["SVM", "CSVM"]
    assert summary.loc[1, "Target (mean)"] == 0.95
    folds = fold_frame(report, Method.CSVM)
    assert list(folds["Fold"]) == [1, 2]
    assert list(folds["param C"]) == [2.0, 2.0]


def test_workbook_sheets_and_summary_append(tmp_path):
    path = tmp_path / "report.xlsx"
    config = {"grid": "small", "rate": ["tpr"], "seed": 0}
    write_report_to_excel(path, _report(), config, "run_a")
    write_report_to_excel(path, _report(), config, "run_b")
    assert set(load_workbook(path).sheetnames) == {"Initial", "Summary", "svm", "csvm"}
    summary = pd.read_excel(path, sheet_name="Summary")
    assert list(summary["Run"]) == ["run_a", "run_a", "run_b", "run_b"]
    initial = pd.read_excel(path, sheet_name="Initial")
    assert "rate" in set(initial["Setting"])
