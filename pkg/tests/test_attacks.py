import pytest

from cachelab import Hierarchy, load_profile
from cachelab.attacks import (FR, PP, RR, AttackConfig, Thresholds, Verdict, attacker_script,
                              calibrate, cost_report, eviction_set_for, rr_initialize,
                              rr_initialize_slot1, rr_refresh)
from cachelab.cache import L1, L2, LLC, make_address
from cachelab.scheduler import AgentProgram, Read, Scheduler, Yield


@pytest.fixture(scope="module")
def prof():
    return load_profile("i5-7600K")


@pytest.fixture(scope="module")
def thr(prof):
    return {t: calibrate(prof, t) for t in (RR, FR, PP)}


def setup(prof, technique=RR, slot=0, mode2=False):
    h = Hierarchy(prof, seed=1)
    w = prof.ways
    target = make_address(0x55, 200, prof.llc)
    ev = eviction_set_for(h, target, w + 1)
    spare = ev.pop() if slot == 1 else None
    cfg = AttackConfig(technique, target, tuple(ev[:w]), target_slot=slot, spare=spare,
                       mode2_variant=mode2)
    return h, cfg


def toucher(addr, pattern, extra=None):
    for k, hit in enumerate(pattern):
        if hit:
            yield Read(addr)
        if extra is not None and extra[k]:
            yield Read(extra[k])
        yield Yield()


def run(h, cfg, thr, pattern, victim_addr=None, extra=None):
    samples = []
    s = Scheduler(h, seed=0)
    s.add(AgentProgram("attacker", 0, attacker_script(cfg, thr, samples, len(pattern))))
    s.add(AgentProgram("victim", 1, toucher(victim_addr or cfg.target, pattern, extra)))
    res = s.run("lockstep")
    return samples, res.counters["victim"]


def drive(h, gen, core=0):
    s = Scheduler(h)
    s.add(AgentProgram("a", core, gen))
    s.run("lockstep")


def test_initialize_puts_target_first_as_candidate(prof):
    h, cfg = setup(prof)
    drive(h, rr_initialize(cfg.target, cfg.eviction_set))
    idx, sl = h.locate(cfg.target)
    s = h.llc_set(idx, sl)
    w = prof.ways
    assert s.lines == [cfg.target >> 6] + [a >> 6 for a in cfg.eviction_set[:w - 1]]
    assert s.ctl == [2] * w
    assert h.policy.candidate(s) == 0
    assert not h.private_resident(cfg.target, core=1)


def test_reload_verdicts_and_timings(prof, thr):
    h, cfg = setup(prof)
    pattern = [False, True, False, False, True, True, False]
    samples, vc = run(h, cfg, thr[RR], pattern)
    assert [s.accessed for s in samples] == pattern
    assert vc.llc_misses == 0
    assert {s.reload_time for s in samples if s.accessed} == {int(thr[RR].accessed_time)}
    assert {s.reload_time for s in samples if not s.accessed} == {int(thr[RR].idle_time)}
    assert not any(s.flagged for s in samples)


def test_calibrated_rr_numbers(thr, prof):
    t = thr[RR]
    assert (t.accessed_time, t.idle_time, t.reload) == (875, 1115, 995)
    assert t.refresh_time == 10 * prof.llc.latency_cycles
    assert t.refresh_bound == 1050 + (345 - 105) / 2


def test_refresh_restores_the_initial_state(prof, thr):
    h, cfg = setup(prof)
    drive(h, rr_initialize(cfg.target, cfg.eviction_set))
    idx, sl = h.locate(cfg.target)
    s = h.llc_set(idx, sl)
    ref = (list(s.lines), list(s.ctl))
    for pattern in ([True], [False], [True, True, False]):
        run(h, cfg, thr[RR], pattern)
        assert (s.lines, s.ctl) == ref


def test_refresh_reads_w_minus_two_lines(prof):
    h, cfg = setup(prof)
    drive(h, rr_initialize(cfg.target, cfg.eviction_set))
    before = h.accesses
    drive(h, rr_refresh(cfg.eviction_set))
    assert h.accesses - before == prof.ways - 2


def test_noise_flags_refresh(prof, thr):
    h, cfg = setup(prof)
    foreign = eviction_set_for(h, cfg.target, 1, first_tag=1 << 22)[0]
    pattern = [False] * 6
    extra = [None, foreign, None, None, foreign, None]
    samples, _ = run(h, cfg, thr[RR], pattern, extra=extra)
    assert any(s.flagged for s in samples)
    assert not samples[0].flagged


def test_noise_tolerant_slot(prof):
    t = calibrate(prof, RR, target_slot=1)
    h, cfg = setup(prof, slot=1)
    pattern = [False, True, True, False, True, False, False, True]
    samples, vc = run(h, cfg, t, pattern)
    assert [s.accessed for s in samples] == pattern
    assert vc.llc_misses == 0


def test_slot1_fill_order(prof):
    h, cfg = setup(prof, slot=1)
    drive(h, rr_initialize_slot1(cfg.target, cfg.eviction_set))
    s = h.llc_set(*h.locate(cfg.target))
    assert s.lines[:2] == [cfg.eviction_set[0] >> 6, cfg.target >> 6]


def test_mode2_without_shared_memory():
    prof = load_profile("i5-7600K").replace(llc_policy="quadage-mode2")
    t = calibrate(prof, RR, mode2=True)
    h, cfg = setup(prof, mode2=True)
    own = eviction_set_for(h, cfg.target, 1, first_tag=1 << 20)[0]
    pattern = [False, True, False, True, True, False]
    samples, _ = run(h, cfg, t, pattern, victim_addr=own)
    assert [s.accessed for s in samples] == pattern


def test_flush_reload(prof, thr):
    h, cfg = setup(prof, FR)
    pattern = [True, False, True, False]
    samples, vc = run(h, cfg, thr[FR], pattern)
    assert [s.accessed for s in samples] == pattern
    # every victim access after a flush comes from memory
    assert vc.llc_misses == 2


def test_prime_probe(prof, thr):
    h, cfg = setup(prof, PP)
    pattern = [False, True, False, True, False]
    samples, _ = run(h, cfg, thr[PP], pattern)
    assert [s.accessed for s in samples] == pattern
    assert thr[PP].accessed_time > thr[PP].idle_time


def test_cost_ordering(prof):
    rep = cost_report(prof)
    assert rep.ordering_holds()
    assert dict(rep.rows())["rr_round"] == rep.rr_reload + rep.rr_refresh


def test_thresholds_verdict():
    t = Thresholds(reload=100)
    assert t.verdict(99) is Verdict.ACCESSED and t.verdict(100) is Verdict.NOT_ACCESSED
    assert Verdict.ACCESSED.value == "Accessed"


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("xx", 0, ())
    with pytest.raises(ValueError):
        AttackConfig(RR, 0, (), sampling_period=0)
    with pytest.raises(ValueError):
        AttackConfig(RR, 0, (), target_slot=2)
    with pytest.raises(ValueError):
        AttackConfig(FR, None, ())
    with pytest.raises(ValueError):
        AttackConfig(RR, 0, (), target_slot=1)
    AttackConfig(PP, None, (1, 2))
    AttackConfig(RR, None, (1, 2), mode2_variant=True)


def test_eviction_set_for_is_congruent(prof):
    p = load_profile("i7-4790")
    h = Hierarchy(p)
    target = make_address(0x99, 1000, p.llc)
    ev = eviction_set_for(h, target, p.ways, exclude=[make_address(1 << 16, 1000, p.llc)])
    assert len(set(ev)) == p.ways and target not in ev
    assert all(h.locate(a) == h.locate(target) for a in ev)
    assert make_address(1 << 16, 1000, p.llc) not in ev
