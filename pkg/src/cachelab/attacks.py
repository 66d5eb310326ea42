"""RELOAD+REFRESH, FLUSH+RELOAD and PRIME+PROBE as scheduler agent scripts.

Every primitive is a generator meant for ``yield from`` inside an agent
script; its return value is the measured cycle delta or a :class:`Sample`.
Verdict thresholds come from :func:`calibrate`, which replays the same
rounds on a scratch hierarchy with and without a victim access and takes
the midpoint of the two timings.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace

from .cache import Hierarchy, make_address
from .config import MachineProfile
from .scheduler import (AgentProgram, Flush, Read, Scheduler, Wait, Yield, FENCE, TIMESTAMP)

RR, FR, PP = "rr", "fr", "pp"
TECHNIQUES = (RR, FR, PP)


class Verdict(str, enum.Enum):
    ACCESSED = "Accessed"
    NOT_ACCESSED = "NotAccessed"


@dataclass(frozen=True)
class AttackConfig:
    technique: str
    target: int | None
    eviction_set: tuple
    sampling_period: int = 3000
    target_slot: int = 0
    mode2_variant: bool = False
    # second forced-miss line for the slot-1 placement
    spare: int | None = None

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if self.sampling_period <= 0:
            raise ValueError("sampling_period must be positive")
        if self.target_slot not in (0, 1):
            raise ValueError("target_slot must be 0 or 1")
        if self.target is None and not (self.technique == RR and self.mode2_variant) \
                and self.technique != PP:
            raise ValueError("this technique needs a shared target address")
        if self.target_slot == 1 and self.spare is None:
            raise ValueError("slot-1 placement needs a spare conflicting line")
        object.__setattr__(self, "eviction_set", tuple(self.eviction_set))


@dataclass
class Sample:
    # when the decisive read was issued; victim activity before it counts
    cycle: int
    reload_time: int
    verdict: Verdict
    refresh_time: int | None = None
    flagged: bool = False
    # from this cycle on, victim activity shows up in the next sample
    reopened: int | None = None

    @property
    def accessed(self) -> bool:
        return self.verdict is Verdict.ACCESSED

    def row(self):
        return (self.cycle, self.reload_time, "" if self.refresh_time is None else self.refresh_time,
                self.verdict.value)


@dataclass(frozen=True)
class Thresholds:
    """Cycle cutoffs for one technique on one profile."""

    reload: float
    refresh_bound: float | None = None
    # timings seen during calibration, for the cost report
    accessed_time: int = 0
    idle_time: int = 0
    refresh_time: int = 0

    def verdict(self, t) -> Verdict:
        return Verdict.ACCESSED if t < self.reload else Verdict.NOT_ACCESSED


# helpers

def eviction_set_for(hierarchy: Hierarchy, target: int, count: int, first_tag: int = 1 << 16,
                     exclude=()) -> list[int]:
    """``count`` attacker lines congruent with ``target`` in the LLC.

    White-box shortcut for experiments that are not about building
    eviction sets: walk tags at the target's set index and keep the ones
    that hash to the target's slice.
    """
    set_index, slice_ = hierarchy.locate(target)
    cfg = hierarchy.profile.llc
    out = []
    skip = {a >> 6 for a in exclude} | {target >> 6}
    tag = first_tag
    while len(out) < count:
        a = make_address(tag, set_index, cfg)
        if hierarchy.locate(a)[1] == slice_ and (a >> 6) not in skip:
            out.append(a)
        tag += 1
    return out


def _timed_reads(addrs):
    t0 = yield TIMESTAMP
    for a in addrs:
        yield Read(a)
    t1 = yield TIMESTAMP
    return t1 - t0


# RELOAD+REFRESH, target in the first slot

def rr_initialize(target, eviction_set):
    """Target first, then every set member but the last; target ends up the candidate."""
    w = len(eviction_set)
    lines = [target] + list(eviction_set[:w - 1])
    for a in lines:
        yield Read(a)
    for a in lines + [eviction_set[w - 1]]:
        yield Flush(a)
    yield FENCE
    for a in lines:
        yield Read(a)
    yield FENCE


def rr_reload(target, eviction_set, marks: list | None = None):
    """Timed reload.

    ``marks`` receives the cycle of the decisive target read and the cycle
    the target is back in place; victim accesses in between are lost.
    """
    w = len(eviction_set)
    t0 = yield TIMESTAMP
    yield FENCE
    yield Read(eviction_set[w - 1])
    yield FENCE
    yield Flush(eviction_set[w - 1])
    yield FENCE
    if marks is not None:
        marks.append((yield TIMESTAMP))
    yield Read(target)
    yield Flush(target)
    yield FENCE
    if marks is not None:
        marks.append((yield TIMESTAMP))
    yield Read(target)
    yield FENCE
    t1 = yield TIMESTAMP
    yield Read(eviction_set[0])
    return t1 - t0


def rr_refresh(eviction_set):
    w = len(eviction_set)
    t = yield from _timed_reads(eviction_set[1:w - 1])
    return t


def rr_round(cfg: AttackConfig, thr: Thresholds):
    if cfg.target_slot == 1:
        return (yield from rr_noise_tolerant_round(cfg, thr))
    marks = []
    reload = yield from rr_reload(cfg.target, cfg.eviction_set, marks)
    refresh = yield from rr_refresh(cfg.eviction_set)
    flagged = thr.refresh_bound is not None and refresh > thr.refresh_bound
    return Sample(marks[0], reload, thr.verdict(reload), refresh, flagged, reopened=marks[1])


# RELOAD+REFRESH, target in the second slot

def rr_initialize_slot1(target, eviction_set):
    """Fill order evset[0], target, evset[1..w-2]; evset[0] is the candidate."""
    w = len(eviction_set)
    lines = [eviction_set[0], target] + list(eviction_set[1:w - 1])
    for a in lines:
        yield Read(a)
    for a in lines + [eviction_set[w - 1]]:
        yield Flush(a)
    yield FENCE
    for a in lines:
        yield Read(a)
    yield FENCE


def rr_noise_tolerant_round(cfg: AttackConfig, thr: Thresholds):
    """One round with the target in the second slot.

    The first forced miss takes the slot-0 line (or whatever foreign line
    aged into the front), the second one reaches the target only if it
    kept its insertion age.  The refresh reads the third element onward
    and the first element last.
    """
    ev = cfg.eviction_set
    w = len(ev)
    target, spare = cfg.target, cfg.spare
    t0 = yield TIMESTAMP
    yield Read(ev[w - 1])
    yield Read(spare)
    yield Flush(ev[w - 1])
    yield Flush(spare)
    yield FENCE
    c = yield TIMESTAMP
    yield Read(target)
    yield FENCE
    t1 = yield TIMESTAMP
    # put the first two slots back in order
    yield Flush(target)
    yield Flush(ev[0])
    yield FENCE
    yield Read(ev[0])
    yield Read(target)
    refresh = yield from _timed_reads(list(ev[1:w - 1]))
    reload = t1 - t0
    flagged = thr.refresh_bound is not None and refresh > thr.refresh_bound
    return Sample(c, reload, thr.verdict(reload), refresh, flagged)


# RELOAD+REFRESH without shared memory (insertion mode 2)

def rr_mode2_initialize(eviction_set):
    for a in eviction_set:
        yield Flush(a)
    yield FENCE
    for a in eviction_set:
        yield Read(a)
    yield FENCE


def rr_mode2_round(cfg: AttackConfig, thr: Thresholds):
    """A miss on the first element means the victim displaced it.

    The miss also reinserts the element and pushes the victim's line out,
    so it doubles as the refresh.  On a hit the element's age dropped, so
    it is flushed and reloaded to become the candidate again.
    """
    first = cfg.eviction_set[0]
    c = yield TIMESTAMP
    t0 = yield TIMESTAMP
    yield FENCE
    yield Read(first)
    yield FENCE
    t1 = yield TIMESTAMP
    if t1 - t0 > thr.reload:
        return Sample(c, t1 - t0, Verdict.ACCESSED)
    yield Flush(first)
    yield FENCE
    yield Read(first)
    return Sample(c, t1 - t0, Verdict.NOT_ACCESSED)


# baselines

def flush_reload_initialize(target):
    yield Flush(target)
    yield FENCE


def flush_reload_round(cfg: AttackConfig, thr: Thresholds):
    c = yield TIMESTAMP
    t0 = yield TIMESTAMP
    yield Read(cfg.target)
    yield FENCE
    t1 = yield TIMESTAMP
    yield Flush(cfg.target)
    yield FENCE
    return Sample(c, t1 - t0, thr.verdict(t1 - t0))


class _ZigZag:
    """Remembers the probe direction between rounds."""

    def __init__(self, eviction_set):
        self.order = list(eviction_set)

    def prime(self):
        for a in self.order:
            yield Read(a)
        yield FENCE

    def probe(self):
        self.order.reverse()
        t = yield from _timed_reads(self.order)
        return t


def prime_probe_round(cfg: AttackConfig, thr: Thresholds, state: _ZigZag):
    """Probe in the direction opposite to the last traversal; the probe is the next prime."""
    c = yield TIMESTAMP
    t = yield from state.probe()
    # thresholds for P+P are "slower than" cutoffs
    v = Verdict.ACCESSED if t > thr.reload else Verdict.NOT_ACCESSED
    return Sample(c, t, v)


# agent scripts

def _initialize(cfg: AttackConfig):
    if cfg.technique == RR:
        if cfg.mode2_variant:
            yield from rr_mode2_initialize(cfg.eviction_set)
        elif cfg.target_slot == 1:
            yield from rr_initialize_slot1(cfg.target, cfg.eviction_set)
        else:
            yield from rr_initialize(cfg.target, cfg.eviction_set)
        return None
    if cfg.technique == FR:
        yield from flush_reload_initialize(cfg.target)
        return None
    zz = _ZigZag(cfg.eviction_set)
    yield from zz.prime()
    return zz


def _round(cfg: AttackConfig, thr: Thresholds, zz):
    if cfg.technique == RR:
        if cfg.mode2_variant:
            return (yield from rr_mode2_round(cfg, thr))
        return (yield from rr_round(cfg, thr))
    if cfg.technique == FR:
        return (yield from flush_reload_round(cfg, thr))
    return (yield from prime_probe_round(cfg, thr, zz))


def attacker_script(cfgs, thr: Thresholds, samples: list, rounds: int | None = None,
                    lockstep: bool = True):
    """Initialise, then sample once per victim step (lockstep), or run each
    round and then idle ``sampling_period`` cycles (concurrent).

    ``cfgs`` is one config or a list of them monitored in the same round.
    With a single config ``samples`` receives Sample objects; with a list
    it receives one list of samples per round.
    """
    single = isinstance(cfgs, AttackConfig)
    if single:
        cfgs = [cfgs]
    states = []
    for cfg in cfgs:
        states.append((yield from _initialize(cfg)))
    period = cfgs[0].sampling_period
    n = 0
    while rounds is None or n < rounds:
        if lockstep:
            yield Yield()
        else:
            yield Wait(period)
        got = []
        for cfg, zz in zip(cfgs, states):
            got.append((yield from _round(cfg, thr, zz)))
        samples.append(got[0] if single else got)
        n += 1


def noise_script(addresses, rate: float, seed: int, period: int = 1000):
    """Touches one of ``addresses`` with probability ``rate`` every ``period`` cycles."""
    rng = random.Random(seed)
    while True:
        yield Wait(period)
        if rng.random() < rate:
            yield Read(rng.choice(addresses))


def lockstep_noise_script(addresses, rate: float, seed: int):
    """Lockstep flavour: at most one noise access per turn."""
    rng = random.Random(seed)
    while True:
        if rng.random() < rate:
            yield Read(rng.choice(addresses))
        yield Yield()


# calibration

def _scratch(profile: MachineProfile):
    # the scratch machine must not be perturbed by set dueling flipping modes
    return Hierarchy(profile, seed=0)


def _toucher(addr, pattern):
    for hit in pattern:
        if hit and addr is not None:
            yield Read(addr)
        yield Yield()


def _probe_config(h: Hierarchy, technique: str, mode2: bool = False, target_slot: int = 0):
    w = h.profile.llc.ways
    target = make_address(0x3F0, 37, h.profile.llc)
    ev = eviction_set_for(h, target, w + 1)
    spare = ev.pop() if target_slot == 1 else None
    return AttackConfig(technique, target, tuple(ev[:w]), target_slot=target_slot,
                        mode2_variant=mode2, spare=spare)


def calibrate(profile: MachineProfile, technique: str = RR, mode2: bool = False,
              target_slot: int = 0, rounds: int = 8) -> Thresholds:
    """Time idle and accessed rounds on a scratch machine; cut in the middle."""
    h = _scratch(profile)
    cfg = _probe_config(h, technique, mode2, target_slot)
    lat = profile.latencies()
    # no round branches on its verdict except mode 2, which needs a sane cut up front
    provisional = Thresholds(reload=float("inf") if technique == PP else 0)
    if mode2:
        provisional = Thresholds(reload=(lat["LLC"] + lat["MEMORY"]) / 2)
    pattern = [k % 2 == 1 for k in range(rounds)]
    samples = []
    sched = Scheduler(h, seed=0)
    sched.add(AgentProgram("attacker", 0, attacker_script(cfg, provisional, samples, rounds)))
    sched.add(AgentProgram("victim", 1, _toucher(cfg.target if not mode2 else None, pattern)))
    if mode2:
        # no shared line: the victim touches its own congruent line
        own = eviction_set_for(h, cfg.target, 1, first_tag=1 << 20)[0]
        sched.agents.pop()
        sched.add(AgentProgram("victim", 1, _toucher(own, pattern)))
    sched.run("lockstep")
    # skip the first pair so the set is in its steady state
    acc = [s.reload_time for s, p in zip(samples, pattern) if p][1:]
    idle = [s.reload_time for s, p in zip(samples, pattern) if not p][1:]
    a, i = max(acc), min(idle)
    if technique == PP:
        a, i = min(acc), max(idle)
        return Thresholds(reload=(a + i) / 2, accessed_time=a, idle_time=i)
    if mode2:
        # slower means accessed here, as for PRIME+PROBE
        return Thresholds(reload=(min(acc) + max(idle)) / 2, accessed_time=min(acc),
                          idle_time=max(idle))
    refresh = max(s.refresh_time or 0 for s in samples)
    bound = None
    if technique == RR:
        bound = refresh + (lat["MEMORY"] - lat["LLC"]) / 2
    return Thresholds(reload=(a + i) / 2, refresh_bound=bound, accessed_time=a, idle_time=i,
                      refresh_time=refresh)


@dataclass
class CostReport:
    """Cycles per round for each technique, idle victim."""

    rr_reload: int
    rr_refresh: int
    fr_round: int
    pp_probe: int

    @property
    def rr_round(self) -> int:
        return self.rr_reload + self.rr_refresh

    def ordering_holds(self) -> bool:
        return self.fr_round < self.pp_probe < self.rr_round

    def rows(self):
        return [("rr_reload", self.rr_reload), ("rr_refresh", self.rr_refresh),
                ("rr_round", self.rr_round), ("fr_round", self.fr_round),
                ("pp_probe", self.pp_probe)]


def cost_report(profile: MachineProfile) -> CostReport:
    rr = calibrate(profile, RR)
    fr = calibrate(profile, FR)
    pp = calibrate(profile, PP)
    return CostReport(int(rr.idle_time), int(rr.refresh_time), int(fr.idle_time),
                      int(pp.idle_time))
