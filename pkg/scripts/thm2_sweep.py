#!/usr/bin/env python3
"""Randomized check of the population-risk lower bound and the correlation-sum bound.

Writes thm2_sweep.csv and lemma2_sweep.csv and prints violation counts.
"""
from __future__ import annotations

import argparse
import csv
from dataclasses import asdict, fields
from pathlib import Path

from tensornet.verify import Lemma2Row, Thm2Row, lemma2_sweep, thm2_sweep


def _write(rows, cls, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=[f.name for f in fields(cls)])
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(row).items()})


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-configs", type=int, default=50)
    ap.add_argument("--n-instances", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweeps")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    thm2, skipped = thm2_sweep(args.n_configs, args.seed)
    _write(thm2, Thm2Row, out / "thm2_sweep.csv")
    bad = sum(not r.holds for r in thm2)
    print(f"lower bound: {len(thm2)} configs, {skipped} skipped draws, {bad} violations, "
          f"{sum(r.rhs > 0 for r in thm2)} with a positive bound")
    lem, lskipped = lemma2_sweep(args.n_instances, args.seed + 1)
    _write(lem, Lemma2Row, out / "lemma2_sweep.csv")
    lbad = sum(not r.holds for r in lem)
    print(f"correlation bound: {len(lem)} instances, {lskipped} skipped draws, {lbad} violations")
    return 0 if bad == lbad == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
