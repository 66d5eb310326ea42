"""Zero-miss share of AES encryptions under PRIME+PROBE variants.

zigzag   : lockstep, probe reverses direction and doubles as the next prime
forward  : lockstep, timed probe then a separate forward prime
gap=N    : concurrent, zig-zag rounds every 3000 cycles, victim idles N cycles
"""

import argparse

from cachelab import Hierarchy, load_profile
from cachelab.attacks import PP, attacker_script, calibrate
from cachelab.scheduler import FENCE, AgentProgram, Read, Scheduler, Yield
from cachelab.telemetry import aes_attack_configs, per_encryption_miss_histogram
from cachelab.victims import AesTTableVictim, aes_victim_script, random_plaintexts


def forward_prime(cfg, n):
    ev = cfg.eviction_set
    for a in ev:
        yield Read(a)
    for _ in range(n):
        yield Yield()
        for a in ev:
            yield Read(a)
        yield FENCE
        for a in ev:
            yield Read(a)


def zero_miss_forward(prof, n, seed, warmup=100):
    h = Hierarchy(prof, seed=seed)
    v = AesTTableVictim(bytes(16))
    cfg = aes_attack_configs(h, v, PP, [(0, 0)])[0]
    recs = []
    s = Scheduler(h, seed=seed)
    s.add(AgentProgram("attacker", 0, forward_prime(cfg, n + warmup)))
    s.add(AgentProgram("victim", 1, aes_victim_script(v, random_plaintexts(n + warmup, seed), recs)))
    s.run("lockstep")
    steady = recs[warmup:]
    return sum(r.misses == 0 for r in steady) / len(steady)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    prof = load_profile("i5-7600K")
    z = per_encryption_miss_histogram(prof, PP, args.n, args.seed).fraction(0)
    print(f"zigzag     {100 * z:6.2f}%")
    print(f"forward    {100 * zero_miss_forward(prof, args.n, args.seed):6.2f}%")
    for gap in (500, 1500, 3000, 6000):
        hist = per_encryption_miss_histogram(prof, PP, args.n, args.seed, lockstep=False, gap=gap)
        print(f"gap={gap:<6d} {100 * hist.fraction(0):6.2f}%")


if __name__ == "__main__":
    main()
