"""Run study specs and write their record, summary and extra tables.

usage: python scripts/run_studies.py [spec.json ...] [--replicates N]

Without arguments every spec under studies/ runs.  Output paths in the
specs are relative to the working directory.
"""

import argparse
import glob
import os
import sys
import time

from gfi import harness, io


def run_one(path, replicates=None):
    d = io.read_spec(path)
    if replicates is not None:
        d["replicates"] = replicates
    spec = harness.StudySpec.from_dict(d)
    t0 = time.time()
    result = harness.run_study(spec)
    for target in (spec.records_out, spec.summary_out, spec.extras_out):
        if target:
            os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
    if spec.records_out:
        io.write_rows(spec.records_out, harness.RECORD_FIELDS, result.record_rows())
    rows = harness.summarize(result.records)
    if spec.summary_out:
        io.write_rows(spec.summary_out, harness.SUMMARY_FIELDS, rows)
    if spec.extras_out and result.extras:
        io.write_rows(spec.extras_out, harness.EXTRA_FIELDS[spec.family], result.extras)
    print(f"{path}: {len(result.records)} records in {time.time() - t0:.0f} s", file=sys.stderr)
    return result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("specs", nargs="*")
    ap.add_argument("--replicates", type=int)
    args = ap.parse_args(argv)
    paths = args.specs or sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..", "studies", "*.json")))
    for p in paths:
        run_one(p, args.replicates)


if __name__ == "__main__":
    main()
