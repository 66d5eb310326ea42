"""Discrete-event scheduler interleaving agent scripts on one cycle clock.

An agent script is a generator that yields events and receives each
event's result through ``send``::

    def spy():
        t0 = yield Timestamp()
        out = yield Read(addr)       # AccessOutcome
        t1 = yield Timestamp()

Sub-routines compose with ``yield from``.  In concurrent mode the event
with the smallest dispatch time runs next; equal times go to the agent
that has waited longest, with the initial order shuffled by the seed.
Lockstep mode runs one agent until it yields :class:`Yield`, then hands
the clock to the next agent in list order.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
import random
from dataclasses import asdict, dataclass, field

from .cache import LLC, MEMORY, L1, L2, AccessOutcome, Hierarchy


class DeadlockError(RuntimeError):
    """Every live agent is waiting forever."""


class Event:
    __slots__ = ()
    kind = "event"


class Read(Event):
    __slots__ = ("addr",)
    kind = "read"

    def __init__(self, addr):
        self.addr = addr


class ReadSeq(Event):
    """Several reads issued back to back as one atomic event.

    Result is the list of outcomes.  Meant for lockstep victims, where no
    other agent could run in between anyway.
    """

    __slots__ = ("addrs",)
    kind = "readseq"

    def __init__(self, addrs):
        self.addrs = addrs


class Flush(Event):
    __slots__ = ("addr",)
    kind = "flush"

    def __init__(self, addr):
        self.addr = addr


class Fence(Event):
    __slots__ = ()
    kind = "fence"


class Wait(Event):
    __slots__ = ("cycles",)
    kind = "wait"

    def __init__(self, cycles):
        if cycles < 0:
            raise ValueError("wait must be non-negative")
        self.cycles = cycles


class Timestamp(Event):
    __slots__ = ()
    kind = "timestamp"


class CounterRead(Event):
    __slots__ = ()
    kind = "counters"


class Yield(Event):
    __slots__ = ()
    kind = "yield"


FENCE, TIMESTAMP, COUNTERS, YIELD = Fence(), Timestamp(), CounterRead(), Yield()


@dataclass
class PerfCounters:
    llc_accesses: int = 0
    llc_misses: int = 0
    cycles: int = 0
    l1_hits: int = 0
    l2_hits: int = 0
    reads: int = 0

    def copy(self) -> "PerfCounters":
        return PerfCounters(**asdict(self))

    def reset(self) -> None:
        for k in asdict(self):
            setattr(self, k, 0)

    def __sub__(self, other: "PerfCounters") -> "PerfCounters":
        return PerfCounters(**{k: getattr(self, k) - getattr(other, k) for k in asdict(self)})


@dataclass
class AgentProgram:
    id: str
    core: int
    script: object
    daemon: bool = False
    start: int = 0


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    agent: str
    event: str
    level: str
    latency: int
    core: int
    addr: int | None


class PeriodicSampler:
    """Per-period LLC miss deltas of one agent, bucketed on the global clock."""

    def __init__(self, agent: str, period_cycles: int):
        if period_cycles <= 0:
            raise ValueError("period must be positive")
        self.agent = agent
        self.period = period_cycles
        self.buckets: dict[int, int] = {}
        self.end = 0

    def record(self, cycle):
        b = cycle // self.period
        self.buckets[b] = self.buckets.get(b, 0) + 1

    def series(self) -> list[int]:
        n = self.end // self.period + 1
        if self.buckets:
            n = max(n, max(self.buckets) + 1)
        return [self.buckets.get(i, 0) for i in range(n)]


class _State:
    __slots__ = ("prog", "gen", "time", "value", "done", "counters", "sampler", "order")

    def __init__(self, prog, order):
        self.prog = prog
        script = prog.script
        self.gen = script() if callable(script) else script
        self.time = prog.start
        self.value = None
        self.done = False
        self.counters = PerfCounters()
        self.sampler = None
        self.order = order


@dataclass
class RunResult:
    trace: list
    counters: dict
    end_cycle: int
    events: int
    samplers: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"end_cycle": self.end_cycle, "events": self.events,
                "counters": {k: asdict(v) for k, v in self.counters.items()}}


class Scheduler:
    def __init__(self, hierarchy: Hierarchy, seed: int = 0, record_trace: bool = False,
                 jitter: int = 0, flush_cycles: int | None = None):
        self.h = hierarchy
        self.seed = seed
        self.rng = random.Random(seed)
        self.record_trace = record_trace
        self.jitter = jitter
        self.flush_cycles = hierarchy.profile.flush_cycles if flush_cycles is None else flush_cycles
        self.agents: list[_State] = []
        self.samplers: dict[str, PeriodicSampler] = {}
        self.trace: list[TraceRecord] = []
        self.clock = 0
        self.events = 0

    def add(self, prog: AgentProgram) -> None:
        if any(a.prog.id == prog.id for a in self.agents):
            raise ValueError(f"duplicate agent id {prog.id!r}")
        if not 0 <= prog.core < self.h.cores:
            raise ValueError(f"agent {prog.id!r} bound to missing core {prog.core}")
        self.agents.append(_State(prog, len(self.agents)))

    def periodic_sampler(self, agent: str, period_cycles: int) -> PeriodicSampler:
        sampler = PeriodicSampler(agent, period_cycles)
        for a in self.agents:
            if a.prog.id == agent:
                a.sampler = sampler
                self.samplers[agent] = sampler
                return sampler
        raise KeyError(agent)

    def counters(self, agent: str) -> PerfCounters:
        return next(a.counters for a in self.agents if a.prog.id == agent)

    # one event
    def _read(self, a, addr, t):
        out = self.h.access(addr, a.prog.core)
        lat = out.latency
        if self.jitter:
            lat = max(1, lat + self.rng.randint(-self.jitter, self.jitter))
        c = a.counters
        c.reads += 1
        lvl = out.served_by
        if lvl is L1:
            c.l1_hits += 1
        elif lvl is L2:
            c.l2_hits += 1
        else:
            c.llc_accesses += 1
            if lvl is MEMORY:
                c.llc_misses += 1
                if a.sampler is not None:
                    a.sampler.record(t)
        if self.record_trace:
            self.trace.append(TraceRecord(t, a.prog.id, "read", lvl, lat, a.prog.core, addr))
        return out, lat

    def _step(self, a: _State) -> bool:
        """Dispatch the agent's next event.  Returns False when it yielded."""
        try:
            ev = a.gen.send(a.value)
        except StopIteration:
            a.done = True
            a.value = None
            return True
        self.events += 1
        t = a.time
        if t > self.clock:
            self.clock = t
        cls = ev.__class__
        if cls is Read:
            a.value, lat = self._read(a, ev.addr, t)
            a.time = t + lat
        elif cls is ReadSeq:
            outs = []
            for addr in ev.addrs:
                out, lat = self._read(a, addr, t)
                outs.append(out)
                t += lat
            a.value = outs
            a.time = t
        elif cls is Flush:
            self.h.flush(ev.addr)
            a.time = t + self.flush_cycles
            a.value = None
            if self.record_trace:
                self.trace.append(TraceRecord(t, a.prog.id, "flush", "", self.flush_cycles,
                                              a.prog.core, ev.addr))
        elif cls is Timestamp:
            a.value = t
        elif cls is Wait:
            a.time = t + ev.cycles
            a.value = None
            if self.record_trace:
                self.trace.append(TraceRecord(t, a.prog.id, "wait", "", ev.cycles, a.prog.core, None))
        elif cls is CounterRead:
            c = a.counters.copy()
            c.cycles = t
            a.value = c
        elif cls is Fence:
            a.value = None
            if self.record_trace:
                self.trace.append(TraceRecord(t, a.prog.id, "fence", "", 0, a.prog.core, None))
        elif cls is Yield:
            a.value = None
            return False
        else:
            raise TypeError(f"agent {a.prog.id!r} yielded unknown event {ev!r}")
        return True

    def _finished(self, stop):
        live = [a for a in self.agents if not a.done and not a.prog.daemon]
        if not live:
            return True
        return stop is not None and stop(self)

    def run(self, mode: str = "concurrent", until: int | None = None, stop=None,
            max_events: int | None = None) -> RunResult:
        if mode not in ("concurrent", "lockstep"):
            raise ValueError(f"unknown scheduling mode {mode!r}")
        if not self.agents:
            raise ValueError("no agents")
        if mode == "concurrent":
            self._run_concurrent(until, stop, max_events)
        else:
            self._run_lockstep(until, stop, max_events)
        for a in self.agents:
            a.counters.cycles = a.time if math.isfinite(a.time) else self.clock
        for s in self.samplers.values():
            s.end = self.clock
        return RunResult(self.trace, {a.prog.id: a.counters for a in self.agents}, self.clock,
                         self.events, dict(self.samplers))

    def _run_concurrent(self, until, stop, max_events):
        order = list(range(len(self.agents)))
        self.rng.shuffle(order)
        seq = 0
        heap = []
        for i in order:
            heap.append((self.agents[i].time, seq, i))
            seq += 1
        heapq.heapify(heap)
        step = self._step
        agents = self.agents
        while heap:
            t, _, i = heap[0]
            if t == math.inf:
                if self._finished(None):
                    break
                raise DeadlockError("all live agents wait forever")
            if until is not None and t >= until:
                break
            if max_events is not None and self.events >= max_events:
                break
            heapq.heappop(heap)
            a = agents[i]
            step(a)
            if a.done:
                if self._finished(stop):
                    break
                continue
            heapq.heappush(heap, (a.time, seq, i))
            seq += 1
            if stop is not None and stop(self):
                break

    def _run_lockstep(self, until, stop, max_events):
        agents = self.agents
        step = self._step
        while True:
            progressed = False
            for a in agents:
                if a.done:
                    continue
                if a.time < self.clock:
                    a.time = self.clock
                progressed = True
                while step(a) and not a.done:
                    if a.time == math.inf:
                        raise DeadlockError(f"agent {a.prog.id!r} waits forever in lockstep mode")
                    if max_events is not None and self.events >= max_events:
                        return
                if a.time > self.clock:
                    self.clock = a.time
                if self._finished(stop):
                    return
                if until is not None and self.clock >= until:
                    return
            if not progressed:
                return

    # exports
    def write_trace_csv(self, path, digest: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# cachelab trace v1 seed={self.h.seed} profile={self.h.profile.name} "
                     f"policy={self.h.profile.llc.policy}\n")
            w = csv.writer(fh)
            w.writerow(["cycle", "agent", "event", "level", "latency", "core", "addr"])
            for r in self.trace:
                w.writerow([r.cycle, r.agent, r.event, r.level, r.latency, r.core,
                            "" if r.addr is None else hex(r.addr)])
            fh.write(f"# end events={len(self.trace)} digest={digest or self.h.digest()}\n")


def write_summary_json(result: RunResult, path, **meta) -> None:
    with open(path, "w") as fh:
        json.dump({**meta, **result.summary()}, fh, indent=2, sort_keys=True)
