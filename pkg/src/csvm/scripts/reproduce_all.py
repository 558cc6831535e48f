from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from datetime import datetime
from pathlib import Path

from tqdm import tqdm

from csvm.core.logging_utils import LOG_FORMAT
from csvm.core.run_helpers import BENCHMARK_DATASETS, get_data_dir

logger = logging.getLogger(__name__)


def parse_args(argv=None) -> tuple[argparse.Namespace, list[str]]:
    parser = argparse.ArgumentParser(
        description="Launch csvm-reproduce once per benchmark dataset found in the data directory. "
        "Unrecognised flags are passed through to every run."
    )
    parser.add_argument("--data-dir", type=str, default=None, help="Directory of <name>.csv files.")
    parser.add_argument("--out", type=str, default="outputs", help="Base output folder.")
    parser.add_argument(
        "--datasets", type=str, default="",
        help=f"Comma-separated subset of {', '.join(BENCHMARK_DATASETS)} (default: all present).",
    )
    return parser.parse_known_args(argv)


def main(argv=None) -> None:
    """
    Launch one reproduce process per dataset CSV present and track them in a
    master log.
    """
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    args, passthrough = parse_args(argv)
    data_dir = Path(args.data_dir).expanduser() if args.data_dir else get_data_dir()
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    wanted = [n.strip() for n in args.datasets.split(",") if n.strip()] or list(BENCHMARK_DATASETS)
    unknown = [n for n in wanted if n not in BENCHMARK_DATASETS]
    if unknown:
        logger.error("Unknown dataset(s): %s", ", ".join(unknown))
        raise SystemExit(1)

    present = []
    for name in wanted:
        path = data_dir / f"{BENCHMARK_DATASETS[name].stem}.csv"
        if path.is_file():
            present.append((name, path))
        else:
            logger.warning("Skipping %s: %s not found", name, path)
    if not present:
        logger.error("No dataset CSV files found in %s! Exiting.", data_dir)
        raise SystemExit(1)

    # Use a full timestamp for the master log (keeps logs unique)
    master_log_ts = datetime.now().strftime("%Y%m%d-%H%M%S")
    master_log_path = out_root / f"master_log_{master_log_ts}.txt"
    # Use a shorter label (mm_dd) for run folders
    ts_label = datetime.now().strftime("%m_%d")

    logger.info("Found %d dataset(s): %s", len(present), ", ".join(n for n, _ in present))
    processes = []

    with open(master_log_path, "w", encoding="utf-8") as master_log:
        master_log.write(f"Master Reproduction Launch Log - {datetime.now()}\n")
        master_log.write("=" * 80 + "\n\n")

        for name, path in present:
            out_folder = out_root / f"Run_{name}__{ts_label}"
            out_folder.mkdir(parents=True, exist_ok=True)
            run_id = f"run_{name}__{ts_label}"
            command = [
                sys.executable, "-m", "csvm.scripts.reproduce", name,
                "--data", str(path.resolve()),
                "--out", str(out_folder.resolve()),
                "--run-id", run_id,
                *passthrough,
            ]
            proc = subprocess.Popen(command, cwd=out_folder)
            processes.append((proc, name))

            launch_time = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
            master_log.write(f"[LAUNCH] {name} at {launch_time}\n")
            master_log.write(f"Command: {' '.join(command)}\n")
            master_log.write(f"Output Folder: {out_folder}\n\n")

        master_log.write("=" * 80 + "\n")
        master_log.flush()

    failures = 0
    with open(master_log_path, "a", encoding="utf-8") as master_log:
        for proc, name in tqdm(processes, desc="Running reproductions", ncols=90):
            return_code = proc.wait()
            end_time = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
            status = "SUCCESS" if return_code == 0 else f"FAIL (exit {return_code})"
            failures += return_code != 0
            master_log.write(f"[FINISH] {name} at {end_time} | Status: {status}\n")
        master_log.write("\nAll reproductions completed.\n")

    logger.info("All reproductions finished (%d failed). See %s for details.", failures, master_log_path)
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
