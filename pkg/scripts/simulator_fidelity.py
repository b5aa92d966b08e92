"""Tau-leaping versus exact SSA, and both versus the mean-field solution.

Usage: python scripts/simulator_fidelity.py [--paths 1000] [--x0 500] [--seed 0]
"""
import argparse

from growthtrials.benchmarks import simulator_fidelity


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--x0", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = simulator_fidelity(x0=args.x0, n_paths=args.paths, seed=args.seed)
    for name, r in res.items():
        print(f"{name}: KS p={r['ks_pvalue']:.3f} (D={r['ks_statistic']:.4f})")
        for (method, pop, day), z in r["mean_z"].items():
            print(f"  {method:<6}{pop} day {day:>4g}: mean z = {z:+.2f}")


if __name__ == "__main__":
    main()
