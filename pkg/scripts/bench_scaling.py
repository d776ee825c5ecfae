#!/usr/bin/env python3
"""Scaling experiment: per-step secure runtime for 1, 2, and 3 study years.

Writes a machine-readable CSV and prints a small table per strategy.

    python scripts/bench_scaling.py --sizes 200,500 --out bench.csv
"""

import argparse
import sys
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from privfed.bench import bench, render_bench_csv  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--modes", default="full,multisite,aggregate_only")
    ap.add_argument("--years", default="1,2,3")
    ap.add_argument("--sizes", default="200")
    ap.add_argument("--overlap", type=float, default=0.05)
    ap.add_argument("--batch-count", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="bench_scaling.csv")
    args = ap.parse_args()

    rows = bench(
        modes=args.modes.split(","),
        year_counts=[int(y) for y in args.years.split(",")],
        sizes=[int(s) for s in args.sizes.split(",")],
        seed=args.seed, overlap=args.overlap, batch_count=args.batch_count,
    )
    Path(args.out).write_text(render_bench_csv(rows), encoding="utf-8")
    print(f"wrote {args.out} ({len(rows)} rows)")

    by_run = defaultdict(dict)
    for r in rows:
        by_run[(r["mode"], r["years"], r["patients_per_site"])][r["step"]] = r
    for (mode, years, patients), steps in sorted(by_run.items()):
        total = steps["total"]
        print(f"\n{mode}  years={years}  patients/site={patients}  "
              f"rows={total['input_rows']}  total={total['seconds']:.2f}s  "
              f"gates={total['and_gates']:,}  bytes={total['bytes_sent']:,}")
        for name, r in steps.items():
            if name != "total":
                print(f"    {name:<13} {r['seconds']:8.3f}s  gates={r['and_gates']:,}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
