"""Entropy against sample count and against the number of pedestrians.

Trains a lookup table on simulated crowd predictions (only at the studied
horizon unless --all-horizons), then writes both sweeps as CSV and PNG.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from scope_kit import plots
from scope_kit.experiments import crowd_records, entropy_vs_objects, entropy_vs_samples, sampled_bundles, train_table
from scope_kit.predict import PredictorConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=5)
    ap.add_argument("--train-scenes", type=int, default=16)
    ap.add_argument("--scenes", type=int, default=20, help="scenes per pedestrian count")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--all-horizons", action="store_true")
    ap.add_argument("--out", default="out/entropy")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PredictorConfig(kind="kinematic")
    T = args.horizon
    table = train_table(args.seed, args.train_scenes, cfg, horizons=None if args.all_horizons else [T], stride=10)
    table.save(out / "uq_table.txt")

    rng = np.random.default_rng(args.seed + 1)
    maps = [sampled_bundles(crowd_records(k, rng, cfg), cfg, rng, cfg.horizon)[0].mean_maps[T - 1] for k in (2, 5)]
    sweep = entropy_vs_samples(table, maps, T, seed=args.seed)
    rows, rho = entropy_vs_objects(table, cfg, T, range(1, 9), args.scenes, args.seed)
    counts = sorted({r["objects"] for r in rows})
    means = [float(np.mean([r["entropy"] for r in rows if r["objects"] == k])) for k in counts]

    with open(out / "entropy_vs_samples.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["samples", "mc_entropy", "quad_entropy"], lineterminator="\n")
        w.writeheader()
        w.writerows(sweep)
    with open(out / "entropy_vs_objects.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["objects", "scene", "entropy"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    plots.xy_curve([r["samples"] for r in sweep], {"Monte Carlo": [r["mc_entropy"] for r in sweep],
                                                   "quadrature": [r["quad_entropy"] for r in sweep]},
                   out / "entropy_vs_samples.png", "samples M", "entropy (nats/cell)", logx=True)
    plots.xy_curve(counts, {f"T={T}": means}, out / "entropy_vs_objects.png", "pedestrians", "normalised entropy")
    for r in sweep:
        print(f"M={r['samples']:5d}  MC {r['mc_entropy']:.5f}  quad {r['quad_entropy']:.5f}")
    print("means by count:", " ".join(f"{m:.4f}" for m in means), f" Spearman rho={rho:.3f}")


if __name__ == "__main__":
    main()
