"""Accuracy of every shadow model against every simulated policy.

Writes a CSV matrix; the diagonal should be 1.0.
"""

import argparse
import csv

from cachelab import Hierarchy, load_profile
from cachelab.config import DuelingConfig
from cachelab.inference import ConflictingSet, EvictionSet, Prober, index_pool, oracle_set_rng
from cachelab.inference import test_policy as score
from cachelab.models import MODEL_NAMES, make_model
from cachelab.policies import ZOO


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=300)
    ap.add_argument("--jitter", type=int, default=0)
    ap.add_argument("--out", default="policy_matrix.csv")
    args = ap.parse_args()
    base = load_profile("i5-7600K")
    w = base.ways
    idx = 37
    rows = []
    for truth in ZOO:
        prof = base.replace(llc_policy=truth, dueling=DuelingConfig.from_regions(1))
        row = [truth]
        for name in MODEL_NAMES:
            h = Hierarchy(prof, seed=1)
            pool = index_pool(h, idx, 2 * w)
            model = make_model(name, w, rng=oracle_set_rng(h, idx),
                               mode=h.selector.mode_for(idx, 0))
            sc = score(EvictionSet(tuple(pool[:w])), ConflictingSet(tuple(pool[w:])), model,
                       Prober(h, jitter=args.jitter, seed=2), args.trials, seed=3)
            row.append(f"{sc.accuracy:.3f}")
        rows.append(row)
        print(" ".join(f"{x:>6s}" if i else f"{x:15s}" for i, x in enumerate(row)))
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["policy"] + list(MODEL_NAMES))
        wr.writerows(rows)


if __name__ == "__main__":
    main()
