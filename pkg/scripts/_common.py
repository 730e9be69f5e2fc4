"""Shared helpers for the experiment runners."""

import argparse
import csv
from pathlib import Path

import numpy as np


def parser(description: str, default_out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=5, help="number of training seeds")
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--out", default=default_out, help="output directory")
    return p


def write_rows(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
    print(f"wrote {path}")


def describe(values) -> str:
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0
    return f"{v.mean():.3f} +/- {se:.3f}"
