"""Full scenario-grid study (simulate, evaluate, score) with a detection summary.

Usage: python scripts/run_simulation_study.py [--config cfg.json] [--jobs N] [--out DIR]

Equivalent to ``growthtrials study``; afterwards prints the detection
proportions per scenario, sample size and method as a plot-ready table.
"""
import argparse
import csv
import sys
from pathlib import Path

from growthtrials.cli import main as cli_main
from growthtrials.evaluation import METHODS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="results/study")
    args = ap.parse_args()
    argv = ["study", "--out", args.out, "--jobs", str(args.jobs)]
    if args.config:
        argv += ["--config", args.config]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    rc = cli_main(argv)
    if rc:
        sys.exit(rc)
    with open(Path(args.out) / "aggregate.csv") as fh:
        agg = list(csv.DictReader(fh))
    table = {}
    for r in agg:
        table.setdefault((r["scenario"], int(r["n"])), {})[r["method"]] = (
            int(r["detected"]) / int(r["total"]))
    print(f"\n{'scenario':<11}{'n':>4}" + "".join(f"{m:>15}" for m in METHODS))
    for (sc, n), row in table.items():
        print(f"{sc:<11}{n:>4}" + "".join(f"{row.get(m, float('nan')):>15.2f}"
                                          for m in METHODS))


if __name__ == "__main__":
    main()
