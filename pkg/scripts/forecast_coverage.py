"""Empirical coverage of 80% fan intervals on held-out synthetic Lee-Carter years.

Each replication simulates 33 fitted plus 30 held-out years from a jump-free
truth, fits the first 33, forecasts 30 years and counts the (age, horizon)
cells whose held-out log rate falls inside the central 80% interval.
"""
from __future__ import annotations

import argparse
import warnings

from _common import parser, progress, seed, settings, write_json
from mortjump.synth import coverage_study, default_truth

T, H = 33, 30
LOW, HIGH = 0.70, 0.90


def main() -> int:
    p: argparse.ArgumentParser = parser(__doc__.splitlines()[0], 10)
    args = p.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)
    report = coverage_study(default_truth("none", T=T + H), H, args.replications, settings(args),
                            seed=seed(args), threads=args.threads, progress=progress("coverage"))
    args.out.mkdir(parents=True, exist_ok=True)
    report.records.to_csv(args.out / "coverage_records.csv", index=False)
    print(report.records.to_string(index=False))
    print(f"pooled coverage {report.pooled:.3f}")
    ok = LOW <= report.pooled <= HIGH
    write_json(args.out / "coverage.json", {"pass": ok, "pooled": report.pooled})
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
