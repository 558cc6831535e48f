from __future__ import annotations

import logging
import time
from pathlib import Path

import pandas as pd
from openpyxl import load_workbook

from .evalharness import RATE_KEYS, CvReport

logger = logging.getLogger(__name__)


def _safe_load_workbook(path, tries=5, delay=0.4):
    last_err = None
    for _ in range(tries):
        try:
            return load_workbook(path)
        except Exception as e:
            last_err = e
            time.sleep(delay)
    raise last_err


def summary_frame(report: CvReport) -> pd.DataFrame:
    """One row per method: label, contributing folds, mean and std of every rate."""
    rows = []
    for method, s in report.summary.items():
        row = {"Method": method.label, "Folds": s.n_folds}
        for key in RATE_KEYS:
            row[f"{key.upper()} mean"] = s.mean[key]
            row[f"{key.upper()} std"] = s.std[key]
        row["Target (mean)"] = s.mean_target
        rows.append(row)
    return pd.DataFrame(rows)


def fold_frame(report: CvReport, method) -> pd.DataFrame:
    rows = []
    for record in report.folds:
        entry = record.results.get(method)
        if entry is None:
            continue
        row = {
            "Fold": record.fold + 1,
            "Train rows": record.train_size,
            "Validation rows": record.validation_size,
            "Estimated p0": record.p0,
        }
        if entry.rates is not None:
            row.update({key.upper(): getattr(entry.rates, key) for key in RATE_KEYS})
        row.update({f"param {k}": v for k, v in entry.params.items()})
        row["Target"] = entry.p_star
        row["Status"] = entry.status
        row["Gap"] = entry.gap
        row["Wall seconds"] = entry.wall_seconds
        row["Error"] = entry.error
        rows.append(row)
    return pd.DataFrame(rows)


def _flatten(prefix: str, tree, out: dict) -> dict:
    if isinstance(tree, dict):
        for key, value in tree.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), value, out)
    elif isinstance(tree, list):
        out[prefix] = ", ".join(str(v) for v in tree)
    else:
        out[prefix] = tree
    return out


def write_report_to_excel(excel_path, report: CvReport, config: dict, run_id: str) -> Path:
    """
    Write an 'Initial' sheet with the run configuration, a 'Summary' sheet with
    method means/stds (appended to when the workbook already has one) and one
    sheet of per-fold rows per method.
    """
    excel_path = Path(excel_path)
    config_df = pd.DataFrame(sorted(_flatten("", config, {}).items()), columns=["Setting", "Value"])
    summary_df = summary_frame(report)
    summary_df.insert(0, "Run", run_id)

    if excel_path.exists():
        wb = _safe_load_workbook(excel_path)
        if "Summary" in wb.sheetnames:
            existing = pd.read_excel(excel_path, sheet_name="Summary")
            summary_df = pd.concat([existing, summary_df], ignore_index=True)
        mode_kwargs = {"mode": "a", "if_sheet_exists": "replace"}
    else:
        mode_kwargs = {"mode": "w"}

    with pd.ExcelWriter(excel_path, engine="openpyxl", **mode_kwargs) as writer:
        config_df.to_excel(writer, sheet_name="Initial", index=False)
        summary_df.to_excel(writer, sheet_name="Summary", index=False)
        for method in report.summary:
            # Excel max 31 chars per sheet name
            fold_frame(report, method).to_excel(writer, sheet_name=method.value[:31], index=False)

    logger.info("[%s] Wrote Excel report to %s", run_id, excel_path)
    return excel_path
