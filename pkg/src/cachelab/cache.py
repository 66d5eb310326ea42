"""Inclusive three-level cache hierarchy.

L1 and L2 are private per core; the LLC is shared, optionally sliced, and
inclusive: evicting a line from it removes every private copy.  Only the
LLC runs the pluggable replacement policies with visible control bits.
The private levels default to true LRU, kept as recency lists.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .config import CacheLevelConfig, MachineProfile
from .policies import INVALID, CacheSet, DuelingSelector, make_policy

LINE_BITS = 6
LINE_SIZE = 1 << LINE_BITS

L1, L2, LLC, MEMORY = "L1", "L2", "LLC", "MEMORY"
LEVELS = (L1, L2, LLC, MEMORY)


@dataclass(frozen=True)
class CacheAddress:
    raw: int
    offset: int
    set_index: int
    tag: int
    slice: int = 0

    def recompose(self, index_bits: int) -> int:
        return (self.tag << (LINE_BITS + index_bits)) | (self.set_index << LINE_BITS) | self.offset


def slice_hash(tag: int, slice_count: int) -> int:
    """XOR-fold of the tag bits.  A stand-in, not any vendor's real hash."""
    if slice_count <= 1:
        return 0
    bits = slice_count.bit_length() - 1
    mask = slice_count - 1
    h = 0
    while tag:
        h ^= tag & mask
        tag >>= bits
    return h


def decompose(raw: int, config: CacheLevelConfig) -> CacheAddress:
    if raw < 0 or raw >= 1 << 64:
        raise ValueError("address must be an unsigned 64-bit value")
    line = raw >> LINE_BITS
    tag = line >> config.index_bits
    return CacheAddress(raw=raw, offset=raw & (LINE_SIZE - 1), set_index=line & (config.sets - 1),
                        tag=tag, slice=slice_hash(tag, config.slice_count))


def make_address(tag: int, set_index: int, config: CacheLevelConfig, offset: int = 0) -> int:
    return (tag << (LINE_BITS + config.index_bits)) | (set_index << LINE_BITS) | offset


@dataclass(frozen=True)
class AccessOutcome:
    served_by: str
    latency: int
    llc_evicted: int | None = None
    back_invalidated: tuple = ()

    @property
    def llc_access(self) -> bool:
        return self.served_by is LLC or self.served_by is MEMORY

    @property
    def llc_miss(self) -> bool:
        return self.served_by is MEMORY


@dataclass(frozen=True)
class LineState:
    tag: int | None
    valid: bool
    age: int | None
    extra_bits: object = None
    address: int | None = field(default=None, compare=False)


class _LruLevel:
    """Private true-LRU level: each set is a list ordered least to most recent."""

    def __init__(self, cfg: CacheLevelConfig):
        self.cfg = cfg
        self.mask = cfg.sets - 1
        self.ways = cfg.ways
        self.sets: dict[int, list] = {}

    def hit(self, line):
        lst = self.sets.get(line & self.mask)
        if lst is not None and line in lst:
            if lst[-1] != line:
                lst.remove(line)
                lst.append(line)
            return True
        return False

    def fill(self, line):
        key = line & self.mask
        lst = self.sets.get(key)
        if lst is None:
            self.sets[key] = [line]
            return
        if len(lst) >= self.ways:
            del lst[0]
        lst.append(line)

    def invalidate(self, line):
        lst = self.sets.get(line & self.mask)
        if lst is not None and line in lst:
            lst.remove(line)
            return True
        return False

    def contains(self, line):
        lst = self.sets.get(line & self.mask)
        return lst is not None and line in lst

    def lines(self):
        for lst in self.sets.values():
            yield from lst

    def states(self, index):
        lst = self.sets.get(index, [])
        ib = self.cfg.index_bits
        out = [LineState(line >> ib, True, rank, None, line << LINE_BITS)
               for rank, line in enumerate(lst)]
        return out + [LineState(None, False, None)] * (self.ways - len(out))

    def snapshot(self):
        return sorted((k, tuple(v)) for k, v in self.sets.items() if v)

    def clear(self):
        self.sets.clear()


class _PolicyLevel:
    """A level whose sets are managed by a ReplacementPolicy."""

    def __init__(self, cfg: CacheLevelConfig, policy):
        self.cfg = cfg
        self.mask = cfg.sets - 1
        self.ways = cfg.ways
        self.policy = policy
        self.sets: dict[int, CacheSet] = {}

    def get(self, index, slice_=0):
        key = slice_ * self.cfg.sets + index
        s = self.sets.get(key)
        if s is None:
            s = CacheSet(self.ways, index, slice_)
            self.policy.init_set(s)
            self.sets[key] = s
        return s

    def hit(self, line):
        s = self.sets.get(line & self.mask)
        if s is not None and line in s.lines:
            self.policy.on_hit(s, s.lines.index(line))
            return True
        return False

    def fill(self, line):
        s = self.get(line & self.mask)
        pol = self.policy
        pol.on_miss(s)
        way = pol.select_victim(s)
        if s.lines[way] != INVALID:
            pol.on_evict(s, way)
        s.lines[way] = line
        pol.on_fill(s, way)

    def invalidate(self, line):
        s = self.sets.get(line & self.mask)
        if s is not None and line in s.lines:
            way = s.lines.index(line)
            s.lines[way] = INVALID
            self.policy.on_invalidate(s, way)
            return True
        return False

    def contains(self, line):
        s = self.sets.get(line & self.mask)
        return s is not None and line in s.lines

    def lines(self):
        for s in self.sets.values():
            for line in s.lines:
                if line != INVALID:
                    yield line

    def states(self, index):
        return _set_states(self.sets.get(index), self.ways, self.cfg.index_bits)

    def snapshot(self):
        return sorted((k, s.snapshot()) for k, s in self.sets.items())

    def clear(self):
        self.sets.clear()


def _set_states(s, ways, index_bits):
    if s is None:
        return [LineState(None, False, None)] * ways
    extra = tuple(s.extra) if isinstance(s.extra, list) else s.extra
    out = []
    for line, c in zip(s.lines, s.ctl):
        if line == INVALID:
            out.append(LineState(None, False, None))
        else:
            out.append(LineState(line >> index_bits, True, c, extra, line << LINE_BITS))
    return out


def _private_level(cfg, seed):
    if cfg.policy == "lru":
        return _LruLevel(cfg)
    return _PolicyLevel(cfg, make_policy(cfg.policy, cfg.ways, seed))


class Hierarchy:
    """Per-core L1/L2 plus a shared inclusive LLC driven by one policy."""

    def __init__(self, profile: MachineProfile, seed: int = 0):
        self.profile = profile
        self.seed = seed
        self.cores = profile.cores
        self.l1 = [_private_level(profile.l1, seed) for _ in range(self.cores)]
        self.l2 = [_private_level(profile.l2, seed) for _ in range(self.cores)]
        llc = profile.llc
        self.selector = None
        if profile.dueling is not None:
            self.selector = DuelingSelector.from_config(profile.dueling)
        self.policy = make_policy(llc.policy, llc.ways, seed, self.selector,
                                  **profile.policy_options)
        self.llc_sets: dict[int, CacheSet] = {}
        self._sets = llc.sets
        self._mask = llc.sets - 1
        self._ibits = llc.index_bits
        self._slices = llc.slice_count
        self._keys: dict[int, int] = {}
        self.lat = profile.latencies()
        self._out = {lvl: AccessOutcome(lvl, self.lat[lvl]) for lvl in LEVELS}
        self.accesses = 0
        # cores that ever touched memory; the others hold nothing to invalidate
        self._active = []

    # address helpers
    def llc_key(self, line: int) -> int:
        key = self._keys.get(line)
        if key is None:
            tag = line >> self._ibits
            key = slice_hash(tag, self._slices) * self._sets + (line & self._mask)
            self._keys[line] = key
        return key

    def locate(self, addr: int) -> tuple[int, int]:
        """(set_index, slice) of an address in the LLC."""
        key = self.llc_key(addr >> LINE_BITS)
        return key % self._sets, key // self._sets

    def llc_set(self, set_index: int, slice_: int = 0) -> CacheSet:
        key = slice_ * self._sets + set_index
        s = self.llc_sets.get(key)
        if s is None:
            s = CacheSet(self.profile.llc.ways, set_index, slice_)
            self.policy.init_set(s)
            self.llc_sets[key] = s
        return s

    # the three operations
    def access(self, addr: int, core: int = 0) -> AccessOutcome:
        self.accesses += 1
        line = addr >> LINE_BITS
        l1 = self.l1[core]
        if core not in self._active:
            self._active.append(core)
        if l1.hit(line):
            return self._out[L1]
        l2 = self.l2[core]
        if l2.hit(line):
            l1.fill(line)
            return self._out[L2]
        key = self._keys.get(line)
        if key is None:
            key = self.llc_key(line)
        s = self.llc_sets.get(key)
        if s is None:
            s = self.llc_set(key % self._sets, key // self._sets)
        lines = s.lines
        pol = self.policy
        if line in lines:
            pol.on_hit(s, lines.index(line))
            l2.fill(line)
            l1.fill(line)
            return self._out[LLC]
        pol.on_miss(s)
        way = pol.select_victim(s)
        victim = lines[way]
        if victim != INVALID:
            pol.on_evict(s, way)
            back = self._back_invalidate(victim)
        lines[way] = line
        pol.on_fill(s, way)
        l2.fill(line)
        l1.fill(line)
        if victim == INVALID:
            return self._out[MEMORY]
        return AccessOutcome(MEMORY, self.lat[MEMORY], victim << LINE_BITS, back)

    def _back_invalidate(self, line):
        out = []
        for core in self._active:
            a = self.l1[core].invalidate(line)
            b = self.l2[core].invalidate(line)
            if a or b:
                out.append(line << LINE_BITS)
        return tuple(out)

    def flush(self, addr: int) -> None:
        line = addr >> LINE_BITS
        for core in self._active:
            self.l1[core].invalidate(line)
            self.l2[core].invalidate(line)
        s = self.llc_sets.get(self.llc_key(line))
        if s is not None and line in s.lines:
            way = s.lines.index(line)
            s.lines[way] = INVALID
            self.policy.on_invalidate(s, way)

    # white-box views, for tests and oracles only
    def inspect_set(self, level: str, set_index: int, slice_: int = 0, core: int = 0):
        if level == LLC:
            if not 0 <= set_index < self._sets or not 0 <= slice_ < self._slices:
                raise IndexError(f"LLC set {set_index}/slice {slice_} out of range")
            key = slice_ * self._sets + set_index
            return _set_states(self.llc_sets.get(key), self.profile.llc.ways, self._ibits)
        if level not in (L1, L2):
            raise ValueError(f"unknown level {level!r}")
        if not 0 <= core < self.cores:
            raise IndexError(f"core {core} out of range")
        lvl = (self.l1 if level == L1 else self.l2)[core]
        if not 0 <= set_index < lvl.cfg.sets or slice_ != 0:
            raise IndexError(f"{level} set {set_index} out of range")
        return lvl.states(set_index)

    def llc_resident(self, addr: int) -> bool:
        s = self.llc_sets.get(self.llc_key(addr >> LINE_BITS))
        return s is not None and (addr >> LINE_BITS) in s.lines

    def private_resident(self, addr: int, core: int = 0) -> bool:
        line = addr >> LINE_BITS
        return self.l1[core].contains(line) or self.l2[core].contains(line)

    def check_inclusion(self) -> list[int]:
        """Addresses held privately but missing from the LLC (empty if inclusive)."""
        bad = []
        for lvl in self.l1 + self.l2:
            for line in lvl.lines():
                if not self.llc_resident(line << LINE_BITS):
                    bad.append(line << LINE_BITS)
        return bad

    def psel(self):
        return None if self.selector is None else self.selector.psel

    def digest(self) -> str:
        h = hashlib.sha256()
        # the seed drives every per-set random stream, so it is part of the state
        h.update(f"{self.profile.digest()}:{self.seed}".encode())
        h.update(repr(sorted((k, s.snapshot()) for k, s in self.llc_sets.items())).encode())
        for lvl in self.l1 + self.l2:
            h.update(repr(lvl.snapshot()).encode())
        h.update(repr(self.psel()).encode())
        return h.hexdigest()

    def reset(self) -> None:
        self.llc_sets.clear()
        for lvl in self.l1 + self.l2:
            lvl.clear()
        self._active = []
        if self.selector is not None:
            self.selector.reset()
