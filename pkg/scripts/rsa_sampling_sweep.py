"""Exponent recovery against the idle time between R+R samples.

For each period the script reports the attack's decode and, as a ceiling,
the decode from perfect windows of the same mean length.
"""

import argparse

import numpy as np

from cachelab import load_profile
from cachelab.telemetry import run_rsa_scenario
from cachelab.victims import RsaSqmVictim, multiply_times, rsa_recover_bits


def ideal_windows(mult, end, span):
    mt = np.asarray(mult)
    out, s = [], 0
    while s < end:
        out.append((s, s + span, bool(((mt > s) & (mt <= s + span)).any())))
        s += span
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bits", type=int, default=1024)
    ap.add_argument("--technique", default="rr", choices=("rr", "fr", "pp"))
    ap.add_argument("--periods", default="0,500,1000,2000,3000,5000")
    args = ap.parse_args()
    prof = load_profile("i5-7600K")
    print("period  span   bits%   TP%    FP%   ideal-bits%")
    for period in (int(x) for x in args.periods.split(",")):
        v = RsaSqmVictim.for_bits(args.bits, 1, square_cost=775, multiply_cost=775, reduce_cost=775)
        run = run_rsa_scenario(prof, args.technique, seed=1, sampling_period=max(period, 1), victim=v)
        wins = run.windows()
        rec = rsa_recover_bits(wins, len(v.bits()), run.first_op, 775, 775, 775, truth=v.bits())
        span = int(np.mean([e - s for s, e, _ in wins[1:]]))
        ideal = rsa_recover_bits(ideal_windows(multiply_times(run.log), run.end, span),
                                 len(v.bits()), run.first_op, 775, 775, 775, truth=v.bits())
        print(f"{period:6d} {span:5d}  {100 * rec.bit_accuracy:6.2f} {100 * rec.tp:6.2f} "
              f"{100 * rec.fp:6.2f}  {100 * ideal.bit_accuracy:6.2f}")


if __name__ == "__main__":
    main()
