"""Black-box replacement-policy reverse engineering.

Everything here talks to the cache only through a :class:`Prober`: timed
reads and flushes, exactly what an unprivileged process gets on real
hardware.  White-box helpers that read simulator state are confined to
the ``oracle_*`` functions and are meant for tests.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .cache import LINE_BITS, Hierarchy, make_address
from .models import PolicyModel


class PoolExhausted(RuntimeError):
    """The candidate pool ran out before the set could be completed."""


class Prober:
    """Timed access to a hierarchy from one core, with optional latency jitter."""

    def __init__(self, hierarchy: Hierarchy, core: int = 0, jitter: int = 0, seed: int = 0):
        self.h = hierarchy
        self.core = core
        self.jitter = jitter
        self.rng = random.Random(seed)
        prof = hierarchy.profile
        self.ll_threshold = prof.ll_threshold
        self.mem_threshold = prof.mem_threshold
        self.reads = 0

    def read(self, addr: int) -> int:
        self.reads += 1
        lat = self.h.access(addr, self.core).latency
        if self.jitter:
            lat = max(1, lat + self.rng.randint(-self.jitter, self.jitter))
        return lat

    def flush(self, addr: int) -> None:
        self.h.flush(addr)

    def read_all(self, addrs) -> None:
        for a in addrs:
            self.read(a)

    def flush_all(self, addrs) -> None:
        for a in addrs:
            self.h.flush(a)


@dataclass(frozen=True)
class EvictionSet:
    addresses: tuple

    def __post_init__(self):
        if len(set(self.addresses)) != len(self.addresses):
            raise ValueError("eviction set members must be distinct")

    def __len__(self):
        return len(self.addresses)

    def __iter__(self):
        return iter(self.addresses)

    def __getitem__(self, i):
        return self.addresses[i]


@dataclass(frozen=True)
class ConflictingSet(EvictionSet):
    pass


def evicts(prober: Prober, target: int, group, clean=()) -> bool:
    """True when loading ``group`` after ``target`` pushes target out of the LLC."""
    prober.flush_all(clean)
    prober.flush(target)
    prober.flush_all(group)
    prober.read(target)
    prober.read_all(group)
    return prober.read(target) > prober.mem_threshold


def build_eviction_set(pool, prober: Prober, ways: int) -> EvictionSet:
    """Eviction set for the set of ``pool[0]`` by group-testing reduction.

    ``pool`` holds addresses sharing the target's index bits.  The result
    is ``pool[0]`` followed by ``ways - 1`` lines that conflict with it.
    """
    pool = list(dict.fromkeys(pool))
    if len(pool) <= ways:
        raise PoolExhausted(f"pool of {len(pool)} cannot yield {ways} conflicting lines")
    target, cur = pool[0], pool[1:]
    if not evicts(prober, target, cur, pool):
        raise PoolExhausted("pool does not contain enough lines of the target set")
    while len(cur) > ways:
        n = min(ways + 1, len(cur))
        bounds = [len(cur) * k // n for k in range(n + 1)]
        for k in reversed(range(n)):
            trial = cur[:bounds[k]] + cur[bounds[k + 1]:]
            if len(trial) >= ways and evicts(prober, target, trial, pool):
                cur = trial
                break
        else:
            raise PoolExhausted("reduction stalled; timing noise or a foreign line in the set")
    prober.flush_all(pool)
    return EvictionSet((target,) + tuple(cur[:ways - 1]))


def conflicts(prober: Prober, evset, e) -> bool:
    """One round of the conflicting-set test for candidate ``e``."""
    prober.read_all(evset)
    prober.flush_all(evset)
    prober.read(e)
    prober.read_all(evset)
    return prober.read(e) > prober.mem_threshold


def get_conflicting_set(evset, candidates, prober: Prober) -> ConflictingSet:
    """Collect ``w`` candidates that the eviction set pushes out of the cache."""
    w = len(evset)
    members = set(evset)
    found = []
    for e in candidates:
        if e in members or e in found:
            continue
        if conflicts(prober, evset, e):
            found.append(e)
            if len(found) == w:
                return ConflictingSet(tuple(found))
    raise PoolExhausted(f"only {len(found)} of {w} conflicting lines among the candidates")


def detect_evicted(prober: Prober, evset, model: PolicyModel | None = None) -> list:
    """Members of ``evset`` that come back from memory.

    Each member is read and then flushed, so reloading an evicted member
    only fills a way freed by the members already flushed, and the probe
    cannot push out members that are still to be timed.
    """
    slow = []
    for a in evset:
        t = prober.read(a)
        prober.flush(a)
        if model is not None:
            model.update(a)
            model.flush(a)
        if t > prober.mem_threshold:
            slow.append(a)
    return slow


def initialize_set(prober: Prober, evset, extra=(), model: PolicyModel | None = None):
    """Fill the set, flush everything, reload the eviction set in order."""
    def observe(a):
        t = prober.read(a)
        if model is not None and t >= prober.ll_threshold:
            model.update(a)

    for a in evset:
        observe(a)
    for a in tuple(evset) + tuple(extra):
        prober.flush(a)
        if model is not None:
            model.flush(a)
    if model is not None:
        model.clear()
    for a in evset:
        observe(a)


@dataclass
class PolicyScore:
    accuracy: float
    hits: int
    valid: int
    trials: int

    @property
    def discarded(self) -> int:
        return self.trials - self.valid


def test_policy(evset, conflicting, model: PolicyModel, prober: Prober, trials: int = 1000,
                seed: int = 0, lim_max: int = 50) -> PolicyScore:
    """Score a shadow model by predicting the line a forced miss evicts.

    Each trial re-initialises the set, makes ``lim`` random accesses to
    eviction-set members (the model only sees the ones slow enough to
    have reached the LLC), forces a miss with a random conflicting line
    and checks the model's candidate against the member that went missing.
    """
    if trials <= 0:
        raise ValueError("accuracy is undefined for zero trials")
    rng = random.Random(seed)
    evset, conflicting = tuple(evset), tuple(conflicting)
    w = len(evset)
    thr = prober.ll_threshold
    hits = valid = 0
    for _ in range(trials):
        initialize_set(prober, evset, conflicting, model)
        for _ in range(rng.randint(0, lim_max)):
            a = evset[rng.randrange(w)]
            if prober.read(a) >= thr:
                model.update(a)
        c = conflicting[rng.randrange(w)]
        predicted = model.candidate()
        prober.read(c)
        # keep the model in step with the cache for the next trial
        model.update(c)
        prober.flush(c)
        model.flush(c)
        slow = detect_evicted(prober, evset, model)
        if len(slow) != 1:
            continue
        valid += 1
        hits += slow[0] == predicted
    return PolicyScore(hits / valid if valid else 0.0, hits, valid, trials)


# helpers for building address pools

def index_pool(hierarchy: Hierarchy, set_index: int, count: int, first_tag: int = 1):
    """``count`` line addresses that share LLC index bits ``set_index``."""
    cfg = hierarchy.profile.llc
    return [make_address(first_tag + k, set_index, cfg) for k in range(count)]


def translate(addr: int, set_index: int, hierarchy: Hierarchy) -> int:
    """Same tag, different set index.  The slice hash only reads tag bits."""
    cfg = hierarchy.profile.llc
    tag = (addr >> LINE_BITS) >> cfg.index_bits
    return make_address(tag, set_index, cfg)


def slice_classes(pool, prober: Prober, ways: int) -> list[list]:
    """Split a same-index pool into groups of mutually conflicting lines.

    Each group starts with a ``ways``-line eviction set; on a sliced LLC
    the groups are the slices.
    """
    rest = list(dict.fromkeys(pool))
    classes = []
    while len(rest) > ways:
        try:
            ev = build_eviction_set(rest, prober, ways)
        except PoolExhausted:
            break
        members = list(ev)
        inside = set(members)
        for e in rest:
            if e not in inside and conflicts(prober, ev, e):
                members.append(e)
        prober.flush_all(rest)
        classes.append(members)
        taken = set(members)
        rest = [a for a in rest if a not in taken]
    return classes


# white-box oracles (tests only)

def oracle_same_set(hierarchy: Hierarchy, addrs) -> bool:
    return len({hierarchy.locate(a) for a in addrs}) == 1


def oracle_set_rng(hierarchy: Hierarchy, set_index: int, slice_: int = 0) -> random.Random:
    """The cache's per-set random stream from its start, for stochastic shadow models.

    Only in step with the cache if the model observes the set from creation on.
    """
    s = hierarchy.llc_set(set_index, slice_)
    return random.Random(hierarchy.policy.set_seed(s))


# leader-set location for set dueling

def burst_misses(prober: Prober, evset, conflicting) -> int:
    """Ordered eviction-set fill, whole conflicting set, eviction-set re-access.

    Returns the misses seen in the re-access: about ``w`` when inserts are
    young (mode 1 evicts the eviction set in order), one when they are old
    (mode 2 recycles a single way for the whole burst).
    """
    prober.flush_all(evset)
    prober.flush_all(conflicting)
    prober.read_all(evset)
    prober.read_all(conflicting)
    thr = prober.mem_threshold
    return sum(prober.read(a) > thr for a in evset)


def favor_mode1(prober: Prober, evset, conflicting) -> None:
    """A pattern that costs old-insert (mode 2) sets more misses than young-insert ones.

    Re-touched eviction-set lines are younger than fresh conflicting lines
    in mode 2, so the conflicting lines keep evicting each other on both
    passes; in mode 1 they settle after the first pass.
    """
    prober.flush_all(evset)
    prober.flush_all(conflicting)
    prober.read_all(evset)
    prober.read_all(evset)
    prober.read_all(conflicting)
    prober.read_all(conflicting)


def favor_mode2(prober: Prober, evset, conflicting) -> None:
    burst_misses(prober, evset, conflicting)


@dataclass
class LeaderReport:
    dueling: bool
    leaders: dict          # slice -> {"mode1": [...], "mode2": [...]}
    regions: dict          # "mode1"/"mode2" -> sorted region start indices
    passes: dict
    modes_a: dict | None = None
    modes_b: dict | None = None

    def leader_set(self) -> set:
        return {(sl, m, i) for sl, d in self.leaders.items() for m, idxs in d.items() for i in idxs}


def locate_leader_sets(prober: Prober, classes, sets_per_slice: int, seed: int = 0,
                       region_size: int = 64, sample: int = 48, margin: int = 2,
                       max_passes: int = 8) -> LeaderReport:
    """Find the sets whose insertion mode does not follow the global selector.

    ``classes`` holds one same-slice group per slice (eviction set first,
    then at least ``w`` more conflicting lines), all at set index 0, as
    returned by :func:`slice_classes`.  Every set is visited in a seeded
    random order.  Training alternates between patterns that make one
    mode's leaders miss more, until a random sample of sets reports that
    the followers switched; ``margin`` extra passes keep the selector away
    from its threshold while all sets are measured.
    """
    rng = random.Random(seed)
    h = prober.h
    w = h.profile.ways
    groups = []
    for cls in classes:
        if len(cls) < 2 * w:
            raise PoolExhausted(f"slice group of {len(cls)} lines, need {2 * w}")
        groups.append((tuple(cls[:w]), tuple(cls[w:2 * w])))
    cache: dict = {}

    def sets_for(g, idx):
        key = (g, idx)
        got = cache.get(key)
        if got is None:
            ev, cf = groups[g]
            got = (tuple(translate(a, idx, h) for a in ev),
                   tuple(translate(a, idx, h) for a in cf))
            cache[key] = got
        return got

    everything = [(g, i) for g in range(len(groups)) for i in range(sets_per_slice)]

    def mode_of(g, i):
        ev, cf = sets_for(g, i)
        return 1 if burst_misses(prober, ev, cf) * 2 > w else 2

    def follower_majority():
        picks = rng.sample(everything, min(sample, len(everything)))
        ones = sum(mode_of(g, i) == 1 for g, i in picks)
        return 1 if ones * 2 > len(picks) else 2

    def train(pattern):
        order = everything[:]
        rng.shuffle(order)
        for g, i in order:
            ev, cf = sets_for(g, i)
            pattern(prober, ev, cf)

    def drive(want, pattern):
        passes = 0
        while follower_majority() != want:
            if passes >= max_passes:
                return passes, False
            train(pattern)
            passes += 1
        for _ in range(margin):
            train(pattern)
        return passes + margin, True

    def measure():
        order = everything[:]
        rng.shuffle(order)
        return {(g, i): mode_of(g, i) for g, i in order}

    passes = {}
    passes["to_mode1"], ok1 = drive(1, favor_mode1)
    modes_a = measure() if ok1 else None
    passes["to_mode2"], ok2 = drive(2, favor_mode2)
    modes_b = measure() if ok2 else None
    leaders = {g: {"mode1": [], "mode2": []} for g in range(len(groups))}
    if not (ok1 and ok2):
        return LeaderReport(False, leaders, {"mode1": [], "mode2": []}, passes, modes_a, modes_b)
    flipped = [k for k in everything if modes_a[k] != modes_b[k]]
    if not flipped:
        return LeaderReport(False, leaders, {"mode1": [], "mode2": []}, passes, modes_a, modes_b)
    for g, i in everything:
        if modes_a[(g, i)] == modes_b[(g, i)]:
            leaders[g][f"mode{modes_a[(g, i)]}"].append(i)
    regions = {m: sorted({i // region_size * region_size for d in leaders.values() for i in d[m]})
               for m in ("mode1", "mode2")}
    for d in leaders.values():
        d["mode1"].sort()
        d["mode2"].sort()
    return LeaderReport(True, leaders, regions, passes, modes_a, modes_b)


# end-to-end policy identification

def infer_policy(hierarchy: Hierarchy, trials: int = 1000, seed: int = 0, jitter: int = 0,
                 models=None, build_index: int = 5, test_index: int = 37,
                 slice_: int | None = None) -> dict:
    """Score every shadow model against the hierarchy's LLC.

    The eviction and conflicting sets are found black-box at
    ``build_index`` and then moved to the untouched set ``test_index``
    (same tags, so same slice).  Stochastic models are handed the cache's
    per-set random stream for that fresh set, which is the one white-box
    concession: no timing attack can recover a seed.
    """
    from .models import MODEL_NAMES, make_model
    h = hierarchy
    w = h.profile.ways
    prober = Prober(h, jitter=jitter, seed=seed)
    pool = index_pool(h, build_index, 4 * w * h.profile.llc.slice_count + 1)
    evset = build_eviction_set(pool, prober, w)
    rest = [a for a in pool if a not in set(evset)]
    conf = get_conflicting_set(evset, rest, prober)
    prober.flush_all(pool)
    ev2 = EvictionSet(tuple(translate(a, test_index, h) for a in evset))
    cf2 = ConflictingSet(tuple(translate(a, test_index, h) for a in conf))
    sl = h.locate(ev2[0])[1] if slice_ is None else slice_
    mode = 1
    if h.selector is not None:
        mode = h.selector.mode_for(test_index, sl)
    scores = {}
    for name in models or MODEL_NAMES:
        # every model starts from a clean cache so hidden state cannot leak between runs
        h.reset()
        model = make_model(name, w, rng=oracle_set_rng(h, test_index, sl), mode=mode)
        scores[name] = test_policy(ev2, cf2, model, prober, trials, seed)
    return scores
