"""Detection summary of the 44 PDX knockout experiments from the bundled tables.

Usage: python scripts/pdx_summary.py [--alpha 0.05]
"""
import argparse

from growthtrials.evaluation import evaluate_pdx, pdx_summary

PUBLISHED = {"t14": (38, 33), "t_end": (44, 40), "exp_chi1sq": (44, 40),
             "exp_cantelli": (44, 31), "logistic_boot": (38, 37)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=0.05)
    args = ap.parse_args()
    decisions = evaluate_pdx(alpha=args.alpha)
    print(f"{'method':<14}{'considered':>11}{'significant':>12}{'enhancing':>10}"
          f"{'published':>12}")
    for r in pdx_summary(decisions):
        pub = PUBLISHED[r["method"]]
        print(f"{r['method']:<14}{r['considered']:>11}{r['significant']:>12}"
              f"{r['enhancing']:>10}{pub[0]:>6}/{pub[1]:<5}")
    enhancing = [k for k, d in decisions.items()
                 for o in d.values() if o.detected and o.direction == "enhancing"]
    print("enhancing:", sorted(set(enhancing)))


if __name__ == "__main__":
    main()
