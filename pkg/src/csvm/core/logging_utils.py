# logging_utils.py
import logging
import sys
from pathlib import Path


LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


def configure_logging(output_dir, run_id: str, verbose: bool = False) -> Path:
    """Console handler on stderr plus `<run_id>.log` in the output folder."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    log_path = output_dir / f"{run_id}.log"
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stderr),
            logging.FileHandler(log_path, mode="w", encoding="utf-8"),
        ],
        force=True,
    )
    return log_path


def log_run_start(run_id: str, command: str, dataset: str):
    logging.info(f"[{run_id}] Starting {command} on dataset: {dataset}")


def log_fold_start(run_id: str, fold: int, n_folds: int, train_size: int, validation_size: int):
    logging.info(
        "[%s] Fold %d/%d: %d training rows, %d validation rows",
        run_id, fold + 1, n_folds, train_size, validation_size
    )


def log_fold_complete(run_id: str, fold: int, summary: str):
    logging.info(f"[{run_id}] Completed fold {fold + 1}: {summary}")


def log_node(run_id: str, node: int, bound: float, incumbent: float, gap: float, depth: int):
    logging.debug(
        "[%s] node %d: bound=%.9g incumbent=%.9g gap=%.3g depth=%d",
        run_id, node, bound, incumbent, gap, depth
    )


def log_solver_summary(run_id: str, status: str, objective: float, gap: float, nodes: int, seconds: float):
    logging.info(
        "[%s] Solver finished: status=%s objective=%.9g gap=%.3g nodes=%d time=%.2fs",
        run_id, status, objective, gap, nodes, seconds
    )
