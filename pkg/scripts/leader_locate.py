"""Locate set-dueling leader sets on a profile, black-box, for several seeds."""

import argparse
import time

from cachelab import Hierarchy, load_profile
from cachelab.inference import Prober, index_pool, locate_leader_sets, slice_classes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", default="i7-4790")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    prof = load_profile(args.profile)
    w = prof.ways
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        h = Hierarchy(prof, seed=seed)
        pr = Prober(h, seed=seed)
        classes = slice_classes(index_pool(h, 0, 4 * w * prof.llc.slice_count), pr, w)
        rep = locate_leader_sets(pr, classes, prof.llc.sets, seed=seed)
        print(f"seed {seed}: dueling={rep.dueling} regions={rep.regions} "
              f"leaders={dict(rep.leaders)} reads={pr.reads} {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
