#!/usr/bin/env python3
"""Online SGD teacher-student grid: normalized error and weight error per window.

Examples:
    python3 scripts/replicate_figure1.py --scale desk --jobs 4 --out runs/desk
    python3 scripts/replicate_figure1.py --scale full --steps 1e-4 --jobs 3 --out runs/full   # hours
"""
from __future__ import annotations

import argparse
import time

from tensornet.sgd import SCALES, metric_spearman, replicate_figure1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scale", choices=sorted(SCALES), default="desk")
    ap.add_argument("--steps", type=float, nargs="+", help="step-size grid (default: the scale's grid)")
    ap.add_argument("--n-steps", type=int, help="override the number of SGD steps")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/figure1")
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    res = replicate_figure1(args.scale, args.jobs, args.out, args.seed, args.steps, args.n_steps)
    print(f"{'r':>5} {'step':>8} {'final_err':>10} {'chamfer':>10} {'spearman':>9}  status")
    for (r, s), tr in sorted(res.items()):
        status = f"diverged ({tr.reason})" if tr.diverged else "ok"
        print(f"{r:>5} {s:>8g} {tr.final_error:>10.4g} {tr.chamfer_err[-1]:>10.4g} {metric_spearman(tr):>9.3f}  {status}")
    print(f"wrote traces to {args.out} in {time.perf_counter() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
