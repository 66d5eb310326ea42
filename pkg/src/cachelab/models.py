"""Shadow models of a single cache set, used to predict eviction candidates.

These are written separately from :mod:`cachelab.policies` on purpose: the
inference harness compares a model's prediction against what the
simulated cache actually evicted, so sharing code would make the check
circular.  Each model keeps an ``address_array`` with one slot per way and
a ``control_array`` where -1 marks an empty slot.
"""

from __future__ import annotations

import random

EMPTY = -1


class PolicyModel:
    name = "model"

    def __init__(self, ways: int):
        self.w = ways
        self.address_array = [None] * ways
        self.control_array = [EMPTY] * ways

    def clear(self):
        """Forget the contents; hidden per-set state survives."""
        self.address_array = [None] * self.w
        self.control_array = [EMPTY] * self.w

    # black-box observations
    def update(self, addr) -> None:
        """Record an access that reached the LLC (a hit or a miss)."""
        arr = self.address_array
        if addr in arr:
            self.hit(arr.index(addr))
            return
        if None in arr:
            slot = arr.index(None)
        else:
            slot = self.victim()
            self.evict(slot)
        arr[slot] = addr
        self.insert(slot)

    def flush(self, addr) -> None:
        arr = self.address_array
        if addr in arr:
            slot = arr.index(addr)
            arr[slot] = None
            self.control_array[slot] = EMPTY
            self.removed(slot)

    def candidate(self):
        """Address that the next miss would evict, or None if a slot is free."""
        arr = self.address_array
        if None in arr:
            return None
        return arr[self.victim()]

    # policy hooks
    def victim(self) -> int:
        raise NotImplementedError

    def evict(self, slot) -> None:
        pass

    def insert(self, slot) -> None:
        raise NotImplementedError

    def hit(self, slot) -> None:
        raise NotImplementedError

    def removed(self, slot) -> None:
        pass


class LRUModel(PolicyModel):
    name = "lru"

    def __init__(self, ways):
        super().__init__(ways)
        self.tick = 0

    def victim(self):
        c = self.control_array
        return c.index(min(c))

    def insert(self, slot):
        self.tick += 1
        self.control_array[slot] = self.tick

    hit = insert


class FIFOModel(LRUModel):
    name = "fifo"

    def hit(self, slot):
        pass


class TreePLRUModel(PolicyModel):
    """Tree bits keyed by the (lo, hi) way range of each internal node."""

    name = "tree-plru"

    def __init__(self, ways):
        super().__init__(ways)
        self.bits = {}

    def _touch(self, slot):
        lo, hi = 0, self.w
        while hi - lo > 1:
            mid = lo + (hi - lo + 1) // 2
            if slot < mid:
                self.bits[(lo, hi)] = 1  # next victim search goes right
                hi = mid
            else:
                self.bits[(lo, hi)] = 0
                lo = mid

    def victim(self):
        lo, hi = 0, self.w
        while hi - lo > 1:
            mid = lo + (hi - lo + 1) // 2
            if self.bits.get((lo, hi), 0):
                lo = mid
            else:
                hi = mid
        return lo

    def insert(self, slot):
        self.control_array[slot] = 0
        self._touch(slot)

    hit = insert


class ClockModel(PolicyModel):
    name = "clock"

    def __init__(self, ways):
        super().__init__(ways)
        self.hand = 0

    def victim(self):
        c = self.control_array
        for k in range(self.w):
            slot = (self.hand + k) % self.w
            if c[slot] == 0:
                return slot
        return self.hand

    def evict(self, slot):
        c = self.control_array
        if all(x == 1 for x in c):
            for i in range(self.w):
                c[i] = 0
        else:
            while self.hand != slot:
                c[self.hand] = 0
                self.hand = (self.hand + 1) % self.w
        self.hand = (slot + 1) % self.w

    def insert(self, slot):
        self.control_array[slot] = 1

    hit = insert


class NRUModel(PolicyModel):
    """Reference bit per line: -1 empty, 0 not recently used, 1 recently used."""

    name = "nru"

    def victim(self):
        c = self.control_array
        if EMPTY in c:
            return c.index(EMPTY)
        return c.index(0) if 0 in c else 0

    def insert(self, slot):
        c = self.control_array
        c[slot] = 1
        if all(x == 1 for x in c):
            for i in range(self.w):
                if i != slot:
                    c[i] = 0

    hit = insert


class AgeModel(PolicyModel):
    """Two-bit age family: quad-age, SRRIP, BRRIP and the dueling variants."""

    def __init__(self, ways, insert_age=2, aging="rrip", hit_promotion="decrement",
                 epsilon=None, rng=None, name="quadage"):
        super().__init__(ways)
        self.insert_age = insert_age
        self.aging = aging
        self.hit_promotion = hit_promotion
        self.epsilon = epsilon
        self.rng = rng
        self.name = name

    def victim(self):
        c = self.control_array
        oldest = max(c)
        for slot, age in enumerate(c):
            if age == oldest:
                return slot
        return 0

    def evict(self, slot):
        if self.aging == "rrip":
            c = self.control_array
            while max(c) < 3:
                for i in range(self.w):
                    c[i] += 1

    def insert(self, slot):
        if self.epsilon is None:
            age = self.insert_age
        else:
            age = 2 if self.rng.random() < self.epsilon else 3
        self.control_array[slot] = age

    def hit(self, slot):
        c = self.control_array
        c[slot] = 0 if self.hit_promotion == "to_zero" else max(0, c[slot] - 1)


class RandomModel(PolicyModel):
    """Random replacement; needs the cache's per-set random stream to predict."""

    name = "random"

    def __init__(self, ways, rng=None):
        super().__init__(ways)
        self.rng = rng if rng is not None else random.Random(0)
        self.next_victim = self.rng.randrange(ways)

    def victim(self):
        return self.next_victim

    def evict(self, slot):
        self.next_victim = self.rng.randrange(self.w)

    def insert(self, slot):
        self.control_array[slot] = 0

    hit = insert


MODEL_NAMES = ("lru", "tree-plru", "fifo", "clock", "nru", "srrip", "brrip", "drrip",
               "quadage-mode1", "quadage-mode2", "quadage-duel", "random")


def make_model(name: str, ways: int, rng: random.Random | None = None, mode: int = 1,
               epsilon: float = 1 / 32, aging: str = "rrip",
               hit_promotion: str | None = None) -> PolicyModel:
    """Build a shadow model by policy name.

    ``mode`` fixes the insertion mode of the dueling variants for the set
    being modelled.  ``rng`` must replay the cache's per-set random stream
    for the stochastic policies (random, brrip, drrip in mode 2).
    """
    if name == "lru":
        return LRUModel(ways)
    if name == "fifo":
        return FIFOModel(ways)
    if name == "tree-plru":
        return TreePLRUModel(ways)
    if name == "clock":
        return ClockModel(ways)
    if name == "nru":
        return NRUModel(ways)
    if name == "random":
        return RandomModel(ways, rng)
    if name in ("quadage-mode1", "quadage-mode2", "quadage-duel"):
        if name != "quadage-duel":
            mode = 1 if name.endswith("1") else 2
        return AgeModel(ways, 2 if mode == 1 else 3, aging, hit_promotion or "decrement",
                        name=name)
    if name in ("srrip", "brrip", "drrip"):
        bimodal = name == "brrip" or (name == "drrip" and mode == 2)
        return AgeModel(ways, 2, aging, hit_promotion or "to_zero",
                        epsilon=epsilon if bimodal else None, rng=rng, name=name)
    raise ValueError(f"unknown model {name!r}")
