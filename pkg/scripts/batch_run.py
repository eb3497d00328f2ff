#!/usr/bin/env python3
"""
Batch runner for ttkry experiments.

Reads a CSV whose header names ExperimentConfig keys (``experiment`` is
required), runs one experiment per row in parallel processes and writes each
row's outputs to ``<out>/row-<index>/``.
"""

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Tuple

from ttkry.cli import KEY_ALIASES, main as run_cli


def read_rows(csv_path: Path) -> List[Dict[str, str]]:
    """Read the experiment rows; empty cells fall back to the defaults."""
    print(f"Reading CSV file: {csv_path}")
    with open(csv_path, "r", newline="") as csvfile:
        reader = csv.DictReader(csvfile)
        if not reader.fieldnames:
            raise ValueError("CSV file appears to be empty or malformed")
        if "experiment" not in reader.fieldnames:
            raise ValueError("CSV file must have an 'experiment' column")
        rows = [{k: v.strip() for k, v in row.items() if v and v.strip()} for row in reader]
    print(f"Found {len(rows)} experiments")
    return rows


def row_to_argv(row: Dict[str, str], out: Path) -> List[str]:
    """Write the row as a config file next to its outputs and build the CLI arguments."""
    out.mkdir(parents=True, exist_ok=True)
    config_path = out / "config.txt"
    settings = {KEY_ALIASES.get(k, k): v for k, v in row.items() if k != "experiment"}
    settings["out"] = str(out)
    config_path.write_text("".join(f"{k} = {v}\n" for k, v in settings.items()))
    return [row["experiment"], "--config", str(config_path)]


def run_row(job: Tuple[int, List[str]]) -> Tuple[int, int]:
    index, argv = job
    return index, run_cli(argv)


def main() -> None:
    parser = argparse.ArgumentParser(description="Run ttkry experiments listed in a CSV file")
    parser.add_argument("csv_file", type=Path, help="Path to the experiments CSV")
    parser.add_argument("--out", type=Path, default=Path("batch"), help="Root output directory")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes")
    args = parser.parse_args()

    if not args.csv_file.exists():
        print(f"Error: CSV file not found: {args.csv_file}")
        sys.exit(1)

    try:
        rows = read_rows(args.csv_file)
    except ValueError as e:
        print(f"Error: {e}")
        sys.exit(1)

    jobs = [(i, row_to_argv(row, args.out / f"row-{i}")) for i, row in enumerate(rows)]
    failed = 0
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for index, status in pool.map(run_row, jobs):
            print(f"row {index}: exit status {status}")
            failed += status != 0

    print(f"\nFinished {len(jobs)} experiments, {failed} without success")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
