"""Replay the d, b, g, a access sequence on a 4-way set under both insertion modes."""

from cachelab import Hierarchy, load_profile
from cachelab.cache import make_address
from cachelab.policies import INVALID

NAMES = {0xA: "a", 0xB: "b", 0xC: "c", 0xD: "d", 0x6: "g"}


def show(s):
    cells = []
    for line, age in zip(s.lines, s.ctl):
        cells.append("--" if line == INVALID else f"{NAMES[line >> 11]}:{age}")
    return "[" + " ".join(cells) + "]"


def replay(mode):
    prof = load_profile("i5-7600K").replace(llc_ways=4, llc_policy=f"quadage-mode{mode}")
    h = Hierarchy(prof)
    addr = {n: make_address(t, 21, prof.llc) for t, n in NAMES.items()}
    s = h.llc_set(21)
    s.lines = [INVALID] + [addr[n] >> 6 for n in "abc"]
    s.ctl = [0, 3, 2, 1]
    print(f"mode {mode}   start {show(s)}")
    for n in "dbga":
        out = h.access(addr[n])
        cand = NAMES[s.lines[h.policy.candidate(s)] >> 11]
        print(f"  access {n}: {out.served_by:6s} {show(s)}  candidate {cand}")


if __name__ == "__main__":
    replay(1)
    replay(2)
