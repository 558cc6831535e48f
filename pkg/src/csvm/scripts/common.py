from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable

from csvm import __version__
from csvm.core.bnb import InfeasibleProblemError, NoIncumbentError
from csvm.core.evalharness import SolverConfig, to_jsonable
from csvm.core.logging_utils import LOG_FORMAT
from csvm.core.metrics import PerformanceTarget, RateKind
from csvm.core.run_helpers import get_current_git_sha

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_NO_INCUMBENT = 3

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


# === Run configuration =======================================================

@dataclass
class RunConfig:
    """Settings shared by the console scripts; defaults < --config file < flags."""

    data: str | None = None
    label_col: str = "class"
    positive: str | None = None
    negative: str | None = None
    categorical: tuple[str, ...] = ()
    kernel: str = "rbf"
    gamma: float | None = None
    C: float = 1.0
    rate: tuple[str, ...] = ("tpr",)
    p0: tuple[float, ...] = ()
    delta: float = 0.025
    alpha: float = 0.05
    M1: float = 100.0
    M2: float = 100.0
    time_limit: float = 300.0
    inner_time_limit: float | None = None
    folds: int | None = None
    grid: str = "full"
    method: tuple[str, ...] = ()
    selection: str | None = None
    reference: str = "anchor"
    seed: int = 0
    out: str = "outputs"
    global_standardize: bool = False
    prove: bool = False
    verbose: bool = False
    workers: int = 1
    compress_threshold: int = 1000
    compress_fraction: float = 0.2

    def __post_init__(self) -> None:
        for rate in self.rate:
            RateKind(rate)
        if self.p0 and len(self.p0) != len(self.rate):
            raise ValueError(f"--p0 gives {len(self.p0)} value(s) for {len(self.rate)} rate(s)")
        if len(set(self.rate)) != len(self.rate):
            raise ValueError(f"--rate lists a rate twice: {','.join(self.rate)}")
        if self.grid not in ("full", "small"):
            raise ValueError(f"--grid must be full or small, got {self.grid!r}")
        if self.workers < 1:
            raise ValueError(f"--workers must be at least 1, got {self.workers}")

    def targets(self, estimates: dict[str, float] | None = None) -> list[PerformanceTarget]:
        """One target per rate; p0 from --p0, else from `estimates`."""
        p0 = dict(zip(self.rate, self.p0)) if self.p0 else dict(estimates or {})
        missing = [r for r in self.rate if r not in p0]
        if missing:
            raise ValueError(f"No p0 for rate(s) {', '.join(missing)}")
        return [PerformanceTarget(RateKind(r), p0[r], alpha=self.alpha, delta=self.delta) for r in self.rate]

    def solver(self) -> SolverConfig:
        return SolverConfig(
            M1=self.M1,
            M2=self.M2,
            time_limit=None if self.prove else self.time_limit,
            inner_time_limit=None if self.prove else self.inner_time_limit,
            workers=self.workers,
        )

    def as_dict(self) -> dict:
        return to_jsonable(asdict(self))

    def digest(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def comma_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def comma_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in comma_list(text))


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"Expected a boolean, got {text!r}")


def _optional_float(text: str) -> float | None:
    return None if str(text).strip().lower() in ("", "none") else float(text)


def _optional_int(text: str) -> int | None:
    return None if str(text).strip().lower() in ("", "none") else int(text)


_CONVERTERS: dict[str, Callable[[str], object]] = {
    "data": str,
    "label_col": str,
    "positive": str,
    "negative": str,
    "categorical": comma_list,
    "kernel": str,
    "gamma": _optional_float,
    "C": float,
    "rate": comma_list,
    "p0": comma_floats,
    "delta": float,
    "alpha": float,
    "M1": float,
    "M2": float,
    "time_limit": float,
    "inner_time_limit": _optional_float,
    "folds": _optional_int,
    "grid": str,
    "method": comma_list,
    "selection": str,
    "reference": str,
    "seed": int,
    "out": str,
    "global_standardize": _bool,
    "prove": _bool,
    "verbose": _bool,
    "workers": int,
    "compress_threshold": int,
    "compress_fraction": float,
}


def read_config_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment, '-' and '_' in keys are interchangeable."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    values = {}
    by_lower = {name.lower(): name for name in _CONVERTERS}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}, line {number}: expected 'key = value', got {raw.strip()!r}")
        name = by_lower.get(key.strip().replace("-", "_").lower())
        if name is None:
            logger.warning("%s, line %d: unknown key %r ignored", path, number, key.strip())
            continue
        try:
            values[name] = _CONVERTERS[name](value.strip())
        except ValueError as exc:
            raise ValueError(f"{path}, line {number}: bad value for {name}: {exc}") from None
    return values


# === Argument parsing ========================================================

def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags default to SUPPRESS so that only flags actually given override the config file."""
    S = argparse.SUPPRESS
    parser.add_argument("--config", type=str, default=None, help="Optional key=value config file.")
    parser.add_argument("--data", type=str, default=S, help="Path to the dataset CSV.")
    parser.add_argument("--label-col", dest="label_col", type=str, default=S, help="Label column name.")
    parser.add_argument("--positive", type=str, default=S, help="Label value of the positive class.")
    parser.add_argument("--negative", type=str, default=S, help="Label value of the negative class (optional).")
    parser.add_argument(
        "--categorical", type=comma_list, default=S,
        help="Comma-separated categorical columns to one-hot encode ('auto' picks non-numeric ones).",
    )
    parser.add_argument("--kernel", choices=("linear", "rbf"), default=S, help="Kernel (default rbf).")
    parser.add_argument("--gamma", type=float, default=S, help="RBF width (default 1/d).")
    parser.add_argument("--C", dest="C", type=float, default=S, help="Penalty C (train).")
    parser.add_argument(
        "--rate", type=comma_list, default=S,
        help="Target rate(s): tpr, tnr, acc; comma-separated for several constraints.",
    )
    parser.add_argument(
        "--p0", type=comma_floats, default=S,
        help="Target value(s), one per rate; estimated by inner CV when omitted.",
    )
    parser.add_argument("--delta", type=float, default=S, help="Uplift added to p0 (default 0.025).")
    parser.add_argument("--alpha", type=float, default=S, help="Hoeffding significance (default 0.05).")
    parser.add_argument("--M1", dest="M1", type=float, default=S, help="Big-M for anchor margins.")
    parser.add_argument("--M2", dest="M2", type=float, default=S, help="Big-M for anchor coefficients.")
    parser.add_argument("--time-limit", dest="time_limit", type=float, default=S, help="Solver time limit (s).")
    parser.add_argument(
        "--inner-time-limit", dest="inner_time_limit", type=float, default=S,
        help="Solver time limit during grid search (default: --time-limit).",
    )
    parser.add_argument("--seed", type=int, default=S, help="Random seed (default 0).")
    parser.add_argument("--out", type=str, default=S, help="Output directory.")
    parser.add_argument("--prove", action="store_true", default=S, help="Run until optimality is proven.")
    parser.add_argument("--verbose", action="store_true", default=S, help="DEBUG logging.")
    parser.add_argument("--workers", type=int, default=S, help="Parallel workers (default 1).")
    parser.add_argument(
        "--global-standardize", dest="global_standardize", action="store_true", default=S,
        help="Standardize once on the full dataset instead of per fold.",
    )


def build_config(args: argparse.Namespace, **defaults) -> RunConfig:
    """Merge built-in defaults, `defaults`, the --config file and the given flags."""
    values = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(read_config_file(config_path))
    names = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig(**values)


# === Outputs =================================================================

def write_json(path, tree) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(tree), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _package_version(name: str) -> str:
    try:
        return version(name)
    except PackageNotFoundError:
        return "not installed"


def write_manifest(out_dir, run_id: str, command: str, config: RunConfig, non_default: list[str] | None = None) -> Path:
    manifest = {
        "run_id": run_id,
        "command": command,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "git_sha": get_current_git_sha(),
        "seed": config.seed,
        "config": config.as_dict(),
        "config_sha256": config.digest(),
        "versions": {
            "constrained-svm": __version__,
            "python": platform.python_version(),
            **{pkg: _package_version(pkg) for pkg in ("numpy", "scipy", "scikit-learn", "pandas", "joblib")},
        },
        "non_default_settings": list(non_default or []),
    }
    return write_json(Path(out_dir) / "manifest.json", manifest)


def run_with_exit_codes(run_id: str, body: Callable[[], None]) -> int:
    """Run `body`, mapping solver outcomes to exit codes 2 and 3 and anything else to 1."""
    try:
        body()
    except InfeasibleProblemError as exc:
        logging.error("[%s] %s", run_id, exc)
        if exc.diagnosis:
            logging.error("[%s] %s", run_id, exc.diagnosis)
        return EXIT_INFEASIBLE
    except NoIncumbentError as exc:
        logging.error("[%s] %s", run_id, exc)
        return EXIT_NO_INCUMBENT
    except Exception as exc:  # noqa: BLE001
        logging.error("[%s] %s: %s", run_id, type(exc).__name__, exc)
        logger.debug("Traceback", exc_info=True)
        return EXIT_ERROR
    return EXIT_OK


def config_or_exit(args: argparse.Namespace, **defaults) -> RunConfig:
    """build_config, exiting with code 1 on an invalid configuration."""
    try:
        return build_config(args, **defaults)
    except (ValueError, FileNotFoundError) as exc:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logging.error("Invalid configuration: %s", exc)
        raise SystemExit(EXIT_ERROR)
