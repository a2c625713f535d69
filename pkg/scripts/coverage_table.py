"""Print coverage at one nominal level from a summary CSV, one line per (cell, metric).

usage: python scripts/coverage_table.py results/mvn_summary.csv [--level 0.95]
"""

import argparse

from gfi import io


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("summary")
    ap.add_argument("--level", type=float, default=0.95)
    args = ap.parse_args(argv)
    with open(args.summary) as fh:
        header, rows = io.parse_rows(fh.read())
    col = {h: j for j, h in enumerate(header)}
    for r in rows:
        if abs(float(r[col["level"]]) - args.level) > 1e-9:
            continue
        print(f"{r[col['cell']]:<32} {r[col['metric']]:<16} {float(r[col['coverage']]):.3f}"
              f"  (median summary {float(r[col['median_summary']]):.4g}, {r[col['replicates']]} reps)")


if __name__ == "__main__":
    main()
