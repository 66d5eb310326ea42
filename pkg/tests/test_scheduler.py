import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachelab import Hierarchy, load_profile
from cachelab.cache import make_address
from cachelab.scheduler import (COUNTERS, FENCE, TIMESTAMP, AgentProgram, DeadlockError, Flush,
                                Read, ReadSeq, Scheduler, Wait, Yield)


@pytest.fixture(scope="module")
def prof():
    return load_profile("i5-7600K")


def reader(addrs, log=None):
    for a in addrs:
        t = yield TIMESTAMP
        out = yield Read(a)
        if log is not None:
            log.append((t, out.served_by))


def test_read_advances_clock_by_latency(prof):
    h = Hierarchy(prof)
    a = make_address(1, 1, prof.llc)
    times = []

    def prog():
        times.append((yield TIMESTAMP))
        yield Read(a)
        times.append((yield TIMESTAMP))
        yield Read(a)
        times.append((yield TIMESTAMP))
        yield Flush(a)
        yield FENCE
        times.append((yield TIMESTAMP))
        yield Wait(100)
        times.append((yield TIMESTAMP))

    s = Scheduler(h)
    s.add(AgentProgram("a", 0, prog()))
    res = s.run()
    assert times == [0, 345, 349, 389, 489]
    assert res.end_cycle == 489


def test_readseq_counts_like_reads(prof):
    h = Hierarchy(prof)
    addrs = [make_address(t, 2, prof.llc) for t in range(5)] * 2
    got = {}

    def prog():
        c0 = yield COUNTERS
        outs = yield ReadSeq(addrs)
        c1 = yield COUNTERS
        got["d"] = c1 - c0
        got["outs"] = outs

    s = Scheduler(h)
    s.add(AgentProgram("v", 0, prog()))
    s.run()
    d = got["d"]
    assert d.reads == 10 and d.llc_misses == 5 and d.l1_hits == 5
    assert d.cycles == 5 * 345 + 5 * 4


@given(st.lists(st.integers(0, 40), min_size=1, max_size=60), st.integers(0, 5))
def test_counter_conservation(tags, seed):
    prof = load_profile("i5-7600K")
    h = Hierarchy(prof, seed=seed)
    addrs = [make_address(t, 3, prof.llc) for t in tags]
    s = Scheduler(h, seed=seed)
    s.add(AgentProgram("x", 0, reader(addrs)))
    s.add(AgentProgram("y", 1, reader(addrs[::-1])))
    res = s.run()
    for c in res.counters.values():
        assert c.reads == c.l1_hits + c.l2_hits + c.llc_accesses
        assert c.llc_misses <= c.llc_accesses


def test_concurrent_order_follows_time(prof):
    h = Hierarchy(prof)
    log = []

    def slow():
        yield Wait(1000)
        log.append(("slow", (yield TIMESTAMP)))

    def fast():
        yield Wait(10)
        log.append(("fast", (yield TIMESTAMP)))

    s = Scheduler(h)
    s.add(AgentProgram("s", 0, slow()))
    s.add(AgentProgram("f", 1, fast()))
    s.run()
    assert log == [("fast", 10), ("slow", 1000)]


def test_lockstep_alternates(prof):
    h = Hierarchy(prof)
    log = []

    def agent(name):
        for i in range(3):
            log.append(name)
            yield Yield()

    s = Scheduler(h)
    s.add(AgentProgram("a", 0, agent("a")))
    s.add(AgentProgram("b", 1, agent("b")))
    s.run("lockstep")
    assert log == ["a", "b"] * 3


def test_daemons_do_not_keep_the_run_alive(prof):
    h = Hierarchy(prof)

    def forever():
        while True:
            yield Wait(50)

    s = Scheduler(h)
    s.add(AgentProgram("d", 0, forever(), daemon=True))
    s.add(AgentProgram("v", 1, reader([make_address(1, 1, prof.llc)])))
    res = s.run()
    assert res.end_cycle < 1000


def test_deadlock_detected(prof):
    h = Hierarchy(prof)

    def stuck():
        yield Wait(float("inf"))

    s = Scheduler(h)
    s.add(AgentProgram("s", 0, stuck()))
    with pytest.raises(DeadlockError):
        s.run()


def test_bad_agents(prof):
    s = Scheduler(Hierarchy(prof))
    s.add(AgentProgram("a", 0, reader([])))
    with pytest.raises(ValueError):
        s.add(AgentProgram("a", 1, reader([])))
    with pytest.raises(ValueError):
        s.add(AgentProgram("z", prof.cores, reader([])))
    with pytest.raises(ValueError):
        s.run("sideways")


def _run(prof, seed):
    h = Hierarchy(prof, seed=seed)
    addrs = [make_address(t, 4, prof.llc) for t in range(30)]
    s = Scheduler(h, seed=seed, record_trace=True, jitter=10)
    s.add(AgentProgram("a", 0, reader(addrs)))
    s.add(AgentProgram("b", 1, reader(addrs[::-1])))
    s.run()
    return s, h


def test_determinism(prof):
    s1, h1 = _run(prof, 3)
    s2, h2 = _run(prof, 3)
    assert s1.trace == s2.trace and h1.digest() == h2.digest()


def test_trace_export(prof, tmp_path):
    s, h = _run(prof, 3)
    p = tmp_path / "t.csv"
    s.write_trace_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# cachelab trace v1 seed=3 profile=i5-7600K")
    assert lines[1] == "cycle,agent,event,level,latency,core,addr"
    assert lines[-1] == f"# end events={len(s.trace)} digest={h.digest()}"


def test_periodic_sampler(prof):
    h = Hierarchy(prof)
    addrs = [make_address(t, 5, prof.llc) for t in range(20)]

    def prog():
        for a in addrs:
            yield Read(a)
            yield Wait(655)

    s = Scheduler(h)
    s.add(AgentProgram("v", 0, prog()))
    sam = s.periodic_sampler("v", 1000)
    s.run()
    series = sam.series()
    assert sum(series) == 20 and max(series) == 1
    with pytest.raises(KeyError):
        s.periodic_sampler("nobody", 10)
