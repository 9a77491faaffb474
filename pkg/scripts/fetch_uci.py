#!/usr/bin/env python3
"""Convenience fetcher for the UCI regression datasets used by the real-data
harness (concrete compressive strength, stock portfolio performance, airfoil
self-noise). Downloads are NOT part of any test path; tests run on
user-supplied CSVs only.

Usage: python scripts/fetch_uci.py [--out data/]
"""

from __future__ import annotations

import argparse
import sys
import urllib.request
from pathlib import Path

DATASETS = {
    # name -> (url, note)
    "concrete": (
        "https://archive.ics.uci.edu/ml/machine-learning-databases/concrete/compressive/Concrete_Data.xls",
        "xls; convert to CSV with eight feature columns and the strength target",
    ),
    "airfoil": (
        "https://archive.ics.uci.edu/ml/machine-learning-databases/00291/airfoil_self_noise.dat",
        "whitespace-separated; five features, sound pressure level target",
    ),
    "stock": (
        "https://archive.ics.uci.edu/ml/machine-learning-databases/00390/stock%20portfolio%20performance%20data%20set.xlsx",
        "xlsx; six concept-weight features, excess-return target",
    ),
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data")
    parser.add_argument("--only", choices=sorted(DATASETS), default=None)
    args = parser.parse_args()
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    names = [args.only] if args.only else sorted(DATASETS)
    for name in names:
        url, note = DATASETS[name]
        dest = outdir / Path(url.split("/")[-1]).name.replace("%20", "_")
        print(f"fetching {name}: {url}\n  -> {dest}  ({note})")
        try:
            urllib.request.urlretrieve(url, dest)
        except OSError as exc:
            print(f"  failed: {exc}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
