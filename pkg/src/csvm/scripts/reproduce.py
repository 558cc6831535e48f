from __future__ import annotations

import argparse
import logging
from pathlib import Path

from csvm.core.dataset import CsvSchema, load_csv
from csvm.core.evalharness import (
    CvPlan,
    CvReport,
    GridSpec,
    Method,
    Reference,
    Selection,
    run_algorithm1,
)
from csvm.core.excel_utils import summary_frame, write_report_to_excel
from csvm.core.kernel import KernelKind
from csvm.core.logging_utils import configure_logging, log_run_start
from csvm.core.metrics import PerformanceTarget, RateKind
from csvm.core.run_helpers import (
    BENCHMARK_DATASETS,
    append_to_global_results,
    dataset_path,
    lookup_dataset,
    make_run_id,
)
from csvm.scripts.common import (
    EXIT_ERROR,
    RunConfig,
    comma_list,
    add_common_arguments,
    config_or_exit,
    run_with_exit_codes,
    write_json,
    write_manifest,
)

logger = logging.getLogger(__name__)

PROTOCOL_DEFAULTS = RunConfig()


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Nested cross-validation of SVM, SVM(C+,C-), sliding beta and CSVM on a benchmark dataset."
    )
    parser.add_argument("dataset", type=str, help=f"One of: {', '.join(BENCHMARK_DATASETS)}.")
    add_common_arguments(parser)
    S = argparse.SUPPRESS
    parser.add_argument("--folds", type=int, default=S, help="Outer and inner folds (default: 5 above 1000 rows, else 10).")
    parser.add_argument("--grid", choices=("full", "small"), default=S, help="Hyperparameter grid.")
    parser.add_argument(
        "--method", type=comma_list, default=S,
        help=f"Comma-separated subset of {', '.join(m.value for m in Method)}.",
    )
    parser.add_argument("--selection", choices=[s.value for s in Selection], default=S,
                        help="Grid-search metric (default: G-mean if the minority class is under 30%%).")
    parser.add_argument("--reference", choices=[r.value for r in Reference], default=S,
                        help="Reference set for the sliding-beta shift.")
    parser.add_argument("--compress-threshold", dest="compress_threshold", type=int, default=S,
                        help="Compress training parts with more rows than this.")
    parser.add_argument("--compress-fraction", dest="compress_fraction", type=float, default=S,
                        help="Fraction of rows kept by k-means compression.")
    parser.add_argument("--run-id", type=str, default=None, help="Run identifier used in logs.")
    return parser.parse_args(argv)


def non_default_settings(config: RunConfig, plan: CvPlan, rule_plan: CvPlan) -> list[str]:
    """Settings that depart from the published protocol."""
    flagged = []
    if plan.outer_folds != rule_plan.outer_folds:
        flagged.append(f"folds={plan.outer_folds} (protocol {rule_plan.outer_folds})")
    if plan.selection is not rule_plan.selection:
        flagged.append(f"selection={plan.selection.value} (protocol {rule_plan.selection.value})")
    for name in ("grid", "kernel", "rate", "delta", "alpha", "M1", "M2", "time_limit", "reference",
                 "compress_threshold", "compress_fraction", "global_standardize"):
        value, default = getattr(config, name), getattr(PROTOCOL_DEFAULTS, name)
        if value != default:
            flagged.append(f"{name}={value} (protocol {default})")
    if config.prove:
        flagged.append("prove (no time limit)")
    if config.p0:
        flagged.append(f"p0={','.join(map(str, config.p0))} given instead of estimated")
    if set(plan.methods) != set(Method):
        flagged.append(f"methods={','.join(m.value for m in plan.methods)}")
    return flagged


def build_plan(config: RunConfig, data) -> tuple[CvPlan, CvPlan]:
    """The plan to run and the plan the protocol rules alone would give."""
    rule_plan = CvPlan.for_dataset(data, compress_threshold=PROTOCOL_DEFAULTS.compress_threshold)
    overrides = {
        "seed": config.seed,
        "kernel": KernelKind(config.kernel),
        "reference": Reference(config.reference),
        "global_standardize": config.global_standardize,
        "compress_fraction": config.compress_fraction,
        "estimate_p0": not config.p0,
        "workers": config.workers,
    }
    if config.method:
        overrides["methods"] = tuple(Method(m) for m in config.method)
    if config.folds is not None:
        overrides["outer_folds"] = overrides["inner_folds"] = config.folds
    if config.selection is not None:
        overrides["selection"] = Selection(config.selection)
    plan = CvPlan.for_dataset(data, compress_threshold=config.compress_threshold, **overrides)
    return plan, rule_plan


def build_target(config: RunConfig) -> PerformanceTarget:
    if len(config.rate) != 1:
        raise ValueError("Cross-validation takes a single target rate")
    p0 = config.p0[0] if config.p0 else 0.0  # replaced per fold by the inner-CV estimate
    return PerformanceTarget(RateKind(config.rate[0]), p0, alpha=config.alpha, delta=config.delta)


def format_tables(report: CvReport, name: str, flagged: list[str]) -> str:
    parts = [f"Dataset: {name}"]
    if list(report.summary) == [Method.SVM]:
        parts += ["", report.format_rates_table(Method.SVM)]
    parts += ["", report.format_table()]
    if flagged:
        parts += ["", "Non-protocol settings: " + "; ".join(flagged)]
    return "\n".join(parts) + "\n"


def reproduce(name: str, config: RunConfig, run_id: str) -> CvReport:
    out_dir = Path(config.out)
    path = Path(config.data) if config.data else dataset_path(name)
    schema = CsvSchema(config.label_col, config.positive, config.categorical, config.negative)
    data = load_csv(path, schema)
    plan, rule_plan = build_plan(config, data)
    flagged = non_default_settings(config, plan, rule_plan)
    for item in flagged:
        logger.warning("[%s] Non-protocol setting: %s", run_id, item)
    grid = GridSpec.full() if config.grid == "full" else GridSpec.small()

    report = run_algorithm1(data, plan, grid, build_target(config), config.solver(), run_id=run_id)
    if not report.summary:
        raise RuntimeError("Every method failed on every fold; see the log for the errors")

    tree = report.to_dict()
    tree["dataset"] = name
    tree["non_default_settings"] = flagged
    write_json(out_dir / "report.json", tree)
    (out_dir / "table.txt").write_text(format_tables(report, name, flagged), encoding="utf-8")
    write_report_to_excel(out_dir / "report.xlsx", report, config.as_dict(), run_id)
    append_to_global_results(out_dir.parent, run_id, summary_frame(report), name)
    write_manifest(out_dir, run_id, "reproduce", config, flagged)
    logger.info("[%s] Results written to %s", run_id, out_dir)
    return report


def main(argv=None) -> None:
    args = parse_args(argv)
    try:
        entry = lookup_dataset(args.dataset)
    except ValueError as exc:
        logging.basicConfig(level=logging.INFO)
        logging.error("%s", exc)
        raise SystemExit(EXIT_ERROR)
    config = config_or_exit(
        args,
        label_col=entry.label_col,
        positive=entry.positive,
        categorical=entry.categorical,
        out=str(Path("outputs") / entry.name),
    )
    run_id = args.run_id or make_run_id("reproduce", entry.name)
    configure_logging(config.out, run_id, config.verbose)
    log_run_start(run_id, "reproduce", entry.name)
    raise SystemExit(run_with_exit_codes(run_id, lambda: reproduce(entry.name, config, run_id)))


if __name__ == "__main__":
    main()
