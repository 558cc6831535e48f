from __future__ import annotations

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from csvm.core.dataset import CsvSchema, load_csv, standardize
from csvm.core.evalharness import CvPlan, Method, estimate_rate, fit_csvm
from csvm.core.kernel import KernelKind, KernelSpec
from csvm.core.logging_utils import configure_logging, log_run_start
from csvm.core.metrics import evaluate
from csvm.core.model_io import SavedModel, save_model
from csvm.core.run_helpers import make_run_id
from csvm.scripts.common import (
    RunConfig,
    add_common_arguments,
    config_or_exit,
    run_with_exit_codes,
    write_json,
    write_manifest,
)

logger = logging.getLogger(__name__)


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Train one constrained SVM on a seeded I/J split of a labeled CSV."
    )
    add_common_arguments(parser)
    parser.add_argument("--run-id", type=str, default=None, help="Run identifier used in logs.")
    return parser.parse_args(argv)


def default_gamma(kind: KernelKind, dimension: int) -> float | None:
    return 1.0 / dimension if kind is KernelKind.RBF else None


def format_train_table(report: dict) -> str:
    lines = [
        f"Status: {report['status']}",
        f"Objective: {report['objective']:.9g}",
        f"Gap: {report['gap']}",
        "",
        f"{'Constraint':<14}{'p0':>8}{'p*':>10}{'required':>10}{'achieved':>10}{'scope':>8}",
    ]
    for c in report["constraints"]:
        lines.append(
            f"{c['rate'].upper():<14}{c['p0']:>8.4f}{c['p_star']:>10.4f}"
            f"{c['required']:>10d}{c['achieved']:>10d}{c['scope_size']:>8d}"
        )
    rates = report["training_rates"]
    lines += ["", "Training rates: " + ", ".join(f"{k.upper()}={rates[k]:.4f}" for k in ("tpr", "tnr", "acc", "gmean"))]
    return "\n".join(lines) + "\n"


def train(config: RunConfig, run_id: str) -> dict:
    """Fit, save model.txt and return the training report."""
    if not config.data:
        raise ValueError("--data is required")
    if config.positive is None:
        raise ValueError("--positive is required")
    out_dir = Path(config.out)
    schema = CsvSchema(config.label_col, config.positive, config.categorical, config.negative)
    raw = load_csv(config.data, schema)
    data = standardize(raw, [raw])[0]

    kind = KernelKind(config.kernel)
    gamma = config.gamma if config.gamma is not None else default_gamma(kind, data.dimension)
    spec = KernelSpec(kind, gamma)
    params = {"C": config.C, "gamma": gamma}

    estimates = None
    if not config.p0:
        plan = CvPlan.for_dataset(data, seed=config.seed, kernel=kind, methods=(Method.SVM,))
        smallest = min(data.class_counts())
        if smallest < plan.inner_folds:
            plan = replace(plan, inner_folds=max(2, smallest))
        estimates = {r: estimate_rate(data, params, plan, r) for r in config.rate}
        logger.info("[%s] Estimated p0 by inner CV: %s", run_id, estimates)
    targets = config.targets(estimates)

    solver = config.solver()
    started = time.perf_counter()
    fit = fit_csvm(
        data, config.C, spec, targets,
        seed=config.seed, solver=solver, time_limit=solver.time_limit, run_id=run_id,
    )
    wall = time.perf_counter() - started
    result = fit.result
    achieved = result.achieved_counts(fit.problem)

    model = SavedModel(
        spec=spec,
        coef=fit.model.solution.dual_coef,
        beta=fit.model.solution.beta,
        support=fit.model.support,
        standardization=data.standardization,
        z=result.z,
        feature_names=data.feature_names,
        metadata={
            "label_col": config.label_col,
            "positive": config.positive,
            "categorical": ",".join(data.categorical),
            "C": repr(float(config.C)),
            "status": result.status.value,
            "objective": repr(float(result.objective)),
        },
    )
    save_model(model, out_dir / "model.txt")

    scores = fit.decision_function(data.X)
    report = {
        "status": result.status.value,
        "objective": result.objective,
        "gap": result.gap,
        "nodes": result.nodes,
        "kernel": spec.describe(),
        "C": config.C,
        "n_I": int(fit.split.I.size),
        "n_J": int(fit.split.J.size),
        "constraints": [
            {
                "rate": c.rate.value,
                "p0": t.p0,
                "p_star": c.p_star,
                "required": c.required,
                "achieved": int(a),
                "scope_size": c.scope_size,
                "clipped": c.clipped,
                "satisfied": bool(a >= c.required),
            }
            for t, c, a in zip(targets, fit.constraints, achieved)
        ],
        "training_rates": evaluate(scores, data.y, seed=config.seed).as_dict(),
        "n_support": int(np.count_nonzero(fit.model.solution.dual_coef)),
        "incumbent_history": [
            {"at_seconds": t, "objective": obj} for t, obj in result.incumbent_history
        ],
        "solve_seconds": result.wall_time_seconds,
        "wall_seconds": wall,
    }
    write_json(out_dir / "report.json", report)
    (out_dir / "table.txt").write_text(format_train_table(report), encoding="utf-8")
    logger.info("[%s] Wrote model and report to %s", run_id, out_dir)
    return report


def main(argv=None) -> None:
    args = parse_args(argv)
    config = config_or_exit(args)
    run_id = args.run_id or make_run_id("train", Path(config.data or "data").stem)
    configure_logging(config.out, run_id, config.verbose)
    log_run_start(run_id, "train", str(config.data))

    def body() -> None:
        train(config, run_id)
        write_manifest(config.out, run_id, "train", config)

    raise SystemExit(run_with_exit_codes(run_id, body))


if __name__ == "__main__":
    main()
