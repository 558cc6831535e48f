from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
import json
import logging
import os
import subprocess

import pandas as pd

from .dataset import AUTO_CATEGORICAL

logger = logging.getLogger(__name__)

# === Data directory ==========================================================

_DATA_ENV_VAR = "CSVM_DATA_DIR"
_CONFIG_FILENAME = "csvm_config.json"


def _find_project_root(marker_files=("pyproject.toml", "setup.cfg", ".git")) -> Path:
    """
    Walk up from this file until we find a directory that looks like
    the project root (contains one of the marker files). If nothing is
    found, fall back to three levels above this file.
    """
    here = Path(__file__).resolve()
    for parent in [here] + list(here.parents):
        if any((parent / m).exists() for m in marker_files):
            return parent
    # src/csvm/core/ -> project root is three levels up
    return here.parents[3]


REPO_ROOT = _find_project_root()


def _load_data_dir_from_config() -> Path | None:
    """
    Try to load the data directory from csvm_config.json at the project root.

    Expected JSON structure:
        { "data_dir": "/srv/uci" }
    """
    cfg_path = REPO_ROOT / _CONFIG_FILENAME
    if not cfg_path.exists():
        return None
    try:
        data = json.loads(cfg_path.read_text())
        data_dir = data.get("data_dir")
        if data_dir:
            return Path(data_dir).expanduser()
    except Exception as exc:  # noqa: BLE001
        logger.warning("Failed to parse %s: %s", cfg_path, exc)
    return None


def get_data_dir() -> Path:
    """
    Directory holding the `<name>.csv` dataset files.

    Resolution order:
        1. CSVM_DATA_DIR environment variable
        2. csvm_config.json at project root
        3. <project root>/data
    """
    env_dir = os.environ.get(_DATA_ENV_VAR)
    if env_dir:
        return Path(env_dir).expanduser()
    cfg_dir = _load_data_dir_from_config()
    if cfg_dir:
        return cfg_dir
    return REPO_ROOT / "data"


# === Dataset registry ========================================================

@dataclass(frozen=True)
class BenchmarkDataset:
    name: str
    stem: str
    label_col: str
    positive: str
    categorical: tuple[str, ...] = ()


# The positive class is the class of interest of each benchmark.
BENCHMARK_DATASETS: dict[str, BenchmarkDataset] = {
    d.name: d
    for d in (
        BenchmarkDataset("australian", "australian", "class", "+"),
        BenchmarkDataset("votes", "votes", "class", "democrat", (AUTO_CATEGORICAL,)),
        BenchmarkDataset("wisconsin", "wisconsin", "class", "M"),
        BenchmarkDataset("german", "german", "class", "bad", (AUTO_CATEGORICAL,)),
        BenchmarkDataset("pageBlocks", "pageBlocks", "class", "graphic"),
        BenchmarkDataset("biodeg", "biodeg", "class", "RB"),
    )
}


def lookup_dataset(name: str) -> BenchmarkDataset:
    try:
        return BENCHMARK_DATASETS[name]
    except KeyError:
        known = ", ".join(sorted(BENCHMARK_DATASETS))
        raise ValueError(f"Unknown dataset {name!r}; known datasets: {known}") from None


def dataset_path(name: str, data_dir: Path | None = None) -> Path:
    entry = lookup_dataset(name)
    path = (data_dir or get_data_dir()) / f"{entry.stem}.csv"
    if not path.is_file():
        raise FileNotFoundError(
            f"Dataset file {path} not found; place it there or set {_DATA_ENV_VAR}"
        )
    return path


# === Run bookkeeping =========================================================

def make_run_id(command: str, label: str) -> str:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return f"{command}_{label}__{stamp}"


def get_current_git_sha(default: str = "unknown") -> str:
    """
    Return the current Git commit SHA for the repo, or `default` if it
    cannot be determined (e.g., not a git repo or git not installed).
    """
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=REPO_ROOT,
            check=True,
            capture_output=True,
            text=True,
        )
        return result.stdout.strip()
    except Exception:
        return default


def append_to_global_results(output_root: Path, run_id: str, summary_df: pd.DataFrame, dataset: str) -> Path:
    """
    Append one block of per-method summary rows to <output_root>/results_log/global_results.csv,
    tagged with run id, dataset, UTC timestamp and git sha.
    """
    results_dir = Path(output_root) / "results_log"
    results_dir.mkdir(parents=True, exist_ok=True)
    log_path = results_dir / "global_results.csv"

    df = summary_df.copy()
    df["run_id"] = run_id
    df["dataset"] = dataset
    df["timestamp_utc"] = datetime.now(timezone.utc).isoformat()
    df["git_sha"] = get_current_git_sha()

    if log_path.exists():
        df.to_csv(log_path, mode="a", header=False, index=False)
    else:
        df.to_csv(log_path, mode="w", header=True, index=False)

    logger.info("Appended %d rows to %s", len(df), log_path)
    return log_path
