"""Per-encryption victim miss histograms and encryption times for each scenario."""

import argparse
from pathlib import Path

from cachelab import load_profile
from cachelab.telemetry import SCENARIOS, encryption_time_distribution, per_encryption_miss_histogram


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="stealth")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    prof = load_profile("i5-7600K")
    print("scenario  zero-miss%  one-miss%  mean-cycles")
    for sc in SCENARIOS:
        hist = per_encryption_miss_histogram(prof, sc, args.n, args.seed)
        td = encryption_time_distribution(prof, sc, min(args.n, 5000), args.seed)
        meta = {"scenario": sc, "n": args.n, "seed": args.seed}
        hist.to_csv(out / f"misses_{sc}.csv", meta)
        td.histogram.to_csv(out / f"time_{sc}.csv", {**meta, "mean": td.mean, "levels": td.levels})
        print(f"{sc:8s}  {100 * hist.fraction(0):9.2f}  {100 * hist.fraction(1):9.2f}  {td.mean:11.1f}")


if __name__ == "__main__":
    main()
