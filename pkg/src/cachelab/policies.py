"""Replacement policies for one cache set.

Every policy works on a :class:`CacheSet`, whose ``lines`` list holds the
line number stored in each way (``INVALID`` when empty) and whose ``ctl``
list holds the per-way control value (age, RRPV, reference bit, ...).
Policy-wide state that is not per way (tree bits, clock hand, the next
random victim) lives in ``CacheSet.extra``.

The contract, in the order the cache calls it on an LLC miss::

    policy.on_miss(s)              # bookkeeping, e.g. psel for set dueling
    way = policy.select_victim(s)  # pure; an invalid way if one exists
    if s.lines[way] != INVALID:
        policy.on_evict(s, way)    # state change caused by the eviction
    s.lines[way] = line
    policy.on_fill(s, way)

and ``on_hit(s, way)`` when the level itself serves an access.
"""

from __future__ import annotations

import copy
import itertools
import random
from abc import ABC, abstractmethod

INVALID = -1
MODE1, MODE2 = 1, 2


class CacheSet:
    __slots__ = ("lines", "ctl", "extra", "index", "slice", "leader", "rng")

    def __init__(self, ways: int, index: int = 0, slice_: int = 0):
        self.lines = [INVALID] * ways
        self.ctl = [0] * ways
        self.extra = None
        self.index = index
        self.slice = slice_
        self.leader = 0
        self.rng = None

    @property
    def ways(self) -> int:
        return len(self.lines)

    def full(self) -> bool:
        return INVALID not in self.lines

    def snapshot(self):
        extra = self.extra
        if isinstance(extra, list):
            extra = tuple(extra)
        rng = self.rng.getstate() if self.rng is not None else None
        return (tuple(self.lines), tuple(self.ctl), extra, self.leader, rng)

    def __repr__(self):
        return f"CacheSet(lines={self.lines}, ctl={self.ctl}, extra={self.extra})"


class ReplacementPolicy(ABC):
    name = "base"
    stochastic = False
    max_ctl = None

    def __init__(self, ways: int, seed: int = 0):
        self.ways = ways
        self.seed = seed

    def init_set(self, s: CacheSet) -> None:
        s.ctl = [0] * self.ways
        if self.stochastic:
            s.rng = random.Random(self.set_seed(s))

    def set_seed(self, s: CacheSet) -> int:
        return (self.seed * 0x9E3779B1 + s.slice * 1_000_003 + s.index) & 0xFFFFFFFFFFFF

    def reset(self, s: CacheSet) -> None:
        s.lines = [INVALID] * self.ways
        s.extra = None
        self.init_set(s)

    def select_victim(self, s: CacheSet) -> int:
        lines = s.lines
        if INVALID in lines:
            return lines.index(INVALID)
        return self.victim(s)

    @abstractmethod
    def victim(self, s: CacheSet) -> int:
        """Victim way of a full set, without changing any state."""

    def on_miss(self, s: CacheSet) -> None:
        pass

    def on_evict(self, s: CacheSet, way: int) -> None:
        pass

    @abstractmethod
    def on_fill(self, s: CacheSet, way: int) -> None: ...

    @abstractmethod
    def on_hit(self, s: CacheSet, way: int) -> None: ...

    def on_invalidate(self, s: CacheSet, way: int) -> None:
        pass

    def candidate(self, s: CacheSet) -> int:
        """The way that the next miss would replace."""
        return self.select_victim(s)


class LRU(ReplacementPolicy):
    name = "lru"

    def __init__(self, ways, seed=0):
        super().__init__(ways, seed)
        self._clock = itertools.count(1)

    def victim(self, s):
        ctl = s.ctl
        return ctl.index(min(ctl))

    def on_fill(self, s, way):
        s.ctl[way] = next(self._clock)

    on_hit = on_fill


class FIFO(LRU):
    name = "fifo"

    def on_hit(self, s, way):
        pass


class TreePLRU(ReplacementPolicy):
    """Binary-tree pseudo-LRU; any associativity, uneven splits go left-heavy."""

    name = "tree-plru"

    def __init__(self, ways, seed=0):
        super().__init__(ways, seed)
        self.left, self.right = [], []
        self.paths = [[] for _ in range(ways)]
        self._build(0, ways, [])

    def _build(self, lo, hi, path):
        if hi - lo == 1:
            self.paths[lo] = path
            return -(lo + 1)
        node = len(self.left)
        self.left.append(None)
        self.right.append(None)
        mid = (lo + hi + 1) // 2
        self.left[node] = self._build(lo, mid, path + [(node, 0)])
        self.right[node] = self._build(mid, hi, path + [(node, 1)])
        return node

    def init_set(self, s):
        super().init_set(s)
        s.extra = [0] * len(self.left)

    def victim(self, s):
        bits = s.extra
        node = 0
        if not bits:
            return 0
        while node >= 0:
            node = self.right[node] if bits[node] else self.left[node]
        return -node - 1

    def on_fill(self, s, way):
        bits = s.extra
        for node, went_right in self.paths[way]:
            bits[node] = 0 if went_right else 1

    on_hit = on_fill


class Clock(ReplacementPolicy):
    name = "clock"

    def init_set(self, s):
        super().init_set(s)
        s.extra = [0]

    def victim(self, s):
        ctl, w, hand = s.ctl, self.ways, s.extra[0]
        for i in range(w):
            way = (hand + i) % w
            if not ctl[way]:
                return way
        return hand

    def on_evict(self, s, way):
        ctl, w = s.ctl, self.ways
        hand = s.extra[0]
        if all(ctl):
            for i in range(w):
                ctl[i] = 0
        else:
            while hand != way:
                ctl[hand] = 0
                hand = (hand + 1) % w
        s.extra[0] = (way + 1) % w

    def on_fill(self, s, way):
        s.ctl[way] = 1

    on_hit = on_fill


class NRU(ReplacementPolicy):
    """One reference bit per way; when every way would be marked, the others are cleared."""

    name = "nru"
    max_ctl = 1

    def victim(self, s):
        ctl = s.ctl
        return ctl.index(0) if 0 in ctl else 0

    def on_fill(self, s, way):
        ctl = s.ctl
        ctl[way] = 1
        if INVALID not in s.lines and 0 not in ctl:
            for i in range(self.ways):
                ctl[i] = 0
            ctl[way] = 1

    on_hit = on_fill

    def on_invalidate(self, s, way):
        s.ctl[way] = 0


class _AgeBased(ReplacementPolicy):
    """2-bit age/RRPV family: evict the leftmost line of the largest age."""

    max_ctl = 3

    def __init__(self, ways, seed=0, aging="rrip", hit_promotion="decrement"):
        super().__init__(ways, seed)
        if aging not in ("rrip", "none"):
            raise ValueError(f"aging must be rrip or none, not {aging!r}")
        if hit_promotion not in ("decrement", "to_zero"):
            raise ValueError(f"hit_promotion must be decrement or to_zero, not {hit_promotion!r}")
        self.aging = aging
        self.hit_promotion = hit_promotion

    def victim(self, s):
        ctl = s.ctl
        return ctl.index(max(ctl))

    def on_evict(self, s, way):
        if self.aging == "rrip":
            ctl = s.ctl
            d = 3 - max(ctl)
            if d:
                for i in range(self.ways):
                    ctl[i] += d

    def on_hit(self, s, way):
        ctl = s.ctl
        if self.hit_promotion == "to_zero":
            ctl[way] = 0
        elif ctl[way]:
            ctl[way] -= 1

    def insertion_age(self, s) -> int:
        raise NotImplementedError

    def on_fill(self, s, way):
        s.ctl[way] = self.insertion_age(s)


class QuadAge(_AgeBased):
    """Quad-age LRU with a fixed insertion age (2 for mode 1, 3 for mode 2)."""

    def __init__(self, ways, seed=0, mode=MODE1, **kw):
        super().__init__(ways, seed, **kw)
        self.mode = mode
        self.name = f"quadage-mode{mode}"
        self._age = 2 if mode == MODE1 else 3

    def insertion_age(self, s):
        return self._age


class SRRIP(_AgeBased):
    name = "srrip"

    def __init__(self, ways, seed=0, **kw):
        kw.setdefault("hit_promotion", "to_zero")
        super().__init__(ways, seed, **kw)

    def insertion_age(self, s):
        return 2


class BRRIP(SRRIP):
    name = "brrip"
    stochastic = True

    def __init__(self, ways, seed=0, epsilon=1 / 32, **kw):
        super().__init__(ways, seed, **kw)
        self.epsilon = epsilon

    def insertion_age(self, s):
        return 2 if s.rng.random() < self.epsilon else 3


class DuelingSelector:
    """Leader sets with fixed modes and a saturating psel counter for followers."""

    def __init__(self, leaders_mode1, leaders_mode2, psel_bits=10, increment_on=MODE1,
                 psel_init=None):
        self.leaders = {}
        for mode, per_slice in ((MODE1, leaders_mode1), (MODE2, leaders_mode2)):
            for sl, idxs in enumerate(per_slice):
                for i in idxs:
                    self.leaders[(sl, i)] = mode
        self.psel_max = (1 << psel_bits) - 1
        self.threshold = 1 << (psel_bits - 1)
        self.increment_on = increment_on
        self.psel = self.threshold - 1 if psel_init is None else psel_init
        self.psel_init = self.psel

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.leaders_mode1, cfg.leaders_mode2, cfg.psel_bits, cfg.increment_on,
                   cfg.psel_init)

    def leader_mode(self, set_index, slice_=0) -> int:
        return self.leaders.get((slice_, set_index), 0)

    def follower_mode(self) -> int:
        # counting up means mode-1 leaders miss more, so followers move to mode 2
        high = self.psel >= self.threshold
        if self.increment_on == MODE1:
            return MODE2 if high else MODE1
        return MODE1 if high else MODE2

    def mode_for(self, set_index, slice_=0) -> int:
        return self.leader_mode(set_index, slice_) or self.follower_mode()

    def record_miss(self, leader: int) -> None:
        if leader == self.increment_on:
            if self.psel < self.psel_max:
                self.psel += 1
        elif leader and self.psel > 0:
            self.psel -= 1

    def reset(self):
        self.psel = self.psel_init


def dueling_mode_for(set_index: int, slice_: int, selector: DuelingSelector) -> int:
    return selector.mode_for(set_index, slice_)


class _Dueling(_AgeBased):
    def __init__(self, ways, seed=0, selector: DuelingSelector | None = None, **kw):
        super().__init__(ways, seed, **kw)
        if selector is None:
            raise ValueError(f"{self.name} needs leader sets (a [dueling] profile section)")
        self.selector = selector

    def init_set(self, s):
        super().init_set(s)
        s.leader = self.selector.leader_mode(s.index, s.slice)

    def on_miss(self, s):
        if s.leader:
            self.selector.record_miss(s.leader)

    def mode(self, s) -> int:
        return s.leader or self.selector.follower_mode()


class QuadAgeDueling(_Dueling):
    name = "quadage-duel"

    def insertion_age(self, s):
        return 2 if self.mode(s) == MODE1 else 3


class DRRIP(_Dueling):
    """Set dueling between SRRIP (mode 1) and BRRIP (mode 2)."""

    name = "drrip"
    stochastic = True

    def __init__(self, ways, seed=0, selector=None, epsilon=1 / 32, **kw):
        kw.setdefault("hit_promotion", "to_zero")
        super().__init__(ways, seed, selector, **kw)
        self.epsilon = epsilon

    def insertion_age(self, s):
        if self.mode(s) == MODE1:
            return 2
        return 2 if s.rng.random() < self.epsilon else 3


class RandomPolicy(ReplacementPolicy):
    """Uniform random victim from a per-set seeded stream.

    The next victim is drawn ahead of time so that ``select_victim`` stays
    pure; the draw is consumed by the eviction.
    """

    name = "random"
    stochastic = True

    def init_set(self, s):
        super().init_set(s)
        s.extra = [s.rng.randrange(self.ways)]

    def victim(self, s):
        return s.extra[0]

    def on_evict(self, s, way):
        s.extra[0] = s.rng.randrange(self.ways)

    def on_fill(self, s, way):
        pass

    on_hit = on_fill


ZOO = ("lru", "tree-plru", "fifo", "clock", "nru", "srrip", "brrip", "drrip",
       "quadage-mode1", "quadage-mode2", "quadage-duel", "random")
NEEDS_DUELING = ("drrip", "quadage-duel")


def check_policy_name(name: str) -> None:
    if name not in ZOO:
        raise ValueError(f"unknown replacement policy {name!r}; known: {', '.join(ZOO)}")


def make_policy(name: str, ways: int, seed: int = 0, selector: DuelingSelector | None = None,
                **options) -> ReplacementPolicy:
    check_policy_name(name)
    age_opts = {k: options[k] for k in ("aging", "hit_promotion") if k in options}
    eps = {"epsilon": options["epsilon"]} if "epsilon" in options else {}
    if name == "lru":
        return LRU(ways, seed)
    if name == "fifo":
        return FIFO(ways, seed)
    if name == "tree-plru":
        return TreePLRU(ways, seed)
    if name == "clock":
        return Clock(ways, seed)
    if name == "nru":
        return NRU(ways, seed)
    if name == "srrip":
        return SRRIP(ways, seed, **age_opts)
    if name == "brrip":
        return BRRIP(ways, seed, **eps, **age_opts)
    if name == "drrip":
        return DRRIP(ways, seed, selector, **eps, **age_opts)
    if name == "quadage-mode1":
        return QuadAge(ways, seed, MODE1, **age_opts)
    if name == "quadage-mode2":
        return QuadAge(ways, seed, MODE2, **age_opts)
    if name == "quadage-duel":
        return QuadAgeDueling(ways, seed, selector, **age_opts)
    return RandomPolicy(ways, seed)


def policy_zoo(ways: int = 12, seed: int = 0, selector: DuelingSelector | None = None) -> dict:
    """Name -> policy instance for every policy in the zoo."""
    if selector is None:
        selector = DuelingSelector(((512,),), ((768,),))
    # each dueling policy gets its own psel
    return {n: make_policy(n, ways, seed, copy.deepcopy(selector)) for n in ZOO}
