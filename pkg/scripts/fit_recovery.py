"""Fit random mixtures from their own inverse-CDF samples and report the L1 recovery error."""
import argparse

import numpy as np

from scope_kit.experiments import fit_recovery


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--draws", type=int, default=20)
    ap.add_argument("--values", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = fit_recovery(args.draws, args.values, args.seed)
    for r in rows:
        print(f"draw {r['draw']:2d}  L1 {r['l1']:.4f}")
    l1 = np.array([r["l1"] for r in rows])
    print(f"{int((l1 < 0.05).sum())}/{len(l1)} below 0.05, worst {l1.max():.4f}")


if __name__ == "__main__":
    main()
