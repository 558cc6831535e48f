from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from csvm.core.dataset import CsvSchema, encode_features, labels_from_column, read_table
from csvm.core.logging_utils import configure_logging, log_run_start
from csvm.core.metrics import RateReport, evaluate
from csvm.core.model_io import SavedModel, load_model
from csvm.core.run_helpers import make_run_id
from csvm.scripts.common import run_with_exit_codes, write_json

logger = logging.getLogger(__name__)


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Score a CSV with a trained model file.")
    parser.add_argument("--model", type=str, required=True, help="Path to model.txt.")
    parser.add_argument("--data", type=str, required=True, help="CSV to score.")
    parser.add_argument("--label-col", dest="label_col", type=str, default=None,
                        help="Label column (default: the one recorded in the model).")
    parser.add_argument("--positive", type=str, default=None,
                        help="Positive label value (default: the one recorded in the model).")
    parser.add_argument("--categorical", type=str, default=None,
                        help="Comma-separated categorical columns (default: those recorded in the model).")
    parser.add_argument("--seed", type=int, default=0, help="Seed for exact-zero scores.")
    parser.add_argument("--out", type=str, default="outputs", help="Output directory.")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging.")
    return parser.parse_args(argv)


def align_features(features: pd.DataFrame, model: SavedModel) -> np.ndarray:
    """
    Order columns as at training time. One-hot columns ("name=value") absent
    from the new data are all-zero; any other missing column is an error.
    """
    if not model.feature_names:
        if features.shape[1] != model.dimension:
            raise ValueError(
                f"Dimension mismatch: model expects {model.dimension} features, data has {features.shape[1]}"
            )
        return features.to_numpy(dtype=float)
    names = list(model.feature_names)
    missing = [n for n in names if n not in features.columns and "=" not in n]
    if missing:
        raise ValueError(f"Dimension mismatch: column(s) {', '.join(missing)} missing from the data")
    extra = [c for c in features.columns if c not in names]
    if extra:
        raise ValueError(f"Dimension mismatch: column(s) {', '.join(extra)} unknown to the model")
    return features.reindex(columns=names, fill_value=0.0).to_numpy(dtype=float)


def predict(model: SavedModel, frame: pd.DataFrame, *, label_col: str | None, positive: str | None,
            categorical=None, seed: int = 0) -> tuple[pd.DataFrame, RateReport | None]:
    """
    Scores and predicted labels for every row, plus rates when labels are present.

    `categorical` defaults to the columns the model was trained with.
    """
    if categorical is None:
        categorical = model.categorical
    labels = None
    if label_col and label_col in frame.columns:
        if positive is None:
            raise ValueError(f"Labels found in {label_col!r} but no positive class is known")
        labels = labels_from_column(frame[label_col], CsvSchema(label_col, positive))
        frame = frame.drop(columns=[label_col])
    X = align_features(encode_features(frame, categorical), model)
    scores = model.decision_function(X)
    out = pd.DataFrame({"score": scores, "predicted": np.where(scores >= 0, 1, -1)})
    if labels is None:
        return out, None
    out["label"] = labels
    return out, evaluate(scores, labels, seed=seed)


def main(argv=None) -> None:
    args = parse_args(argv)
    run_id = make_run_id("predict", Path(args.data).stem)
    out_dir = Path(args.out)
    configure_logging(out_dir, run_id, args.verbose)
    log_run_start(run_id, "predict", args.data)

    def body() -> None:
        model = load_model(args.model)
        label_col = args.label_col or model.metadata.get("label_col")
        positive = args.positive or model.metadata.get("positive")
        if args.categorical is None:
            categorical = model.categorical
        else:
            categorical = tuple(c.strip() for c in args.categorical.split(",") if c.strip())
        predictions, rates = predict(
            model, read_table(args.data),
            label_col=label_col, positive=positive, categorical=categorical, seed=args.seed,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        predictions.to_csv(out_dir / "predictions.csv", index=False)
        logger.info("[%s] Wrote %d predictions to %s", run_id, len(predictions), out_dir / "predictions.csv")
        if rates is not None:
            write_json(out_dir / "report.json", {"rates": rates.as_dict(), "n": len(predictions)})
            logger.info("[%s] TPR=%.4f TNR=%.4f ACC=%.4f", run_id, rates.tpr, rates.tnr, rates.acc)

    raise SystemExit(run_with_exit_codes(run_id, body))


if __name__ == "__main__":
    main()
